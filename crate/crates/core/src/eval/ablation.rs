//! The pretraining ablation grid on a synthetic world.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::encoder::{Fusion, VocabSizes};
use crate::error::{Error, Result};
use crate::eval::linkpred::{build_queries, eval_contextual, LpQuery};
use crate::eval::synthetic::SyntheticWorld;
use crate::finetune::{evaluate, finetune, prepare, PreparedQuestion};
use crate::kg::{KnowledgeGraph, Triplet};
use crate::model::Model;
use crate::pretrain::heads::Scorer;
use crate::pretrain::{build_examples, evaluate_mlm, Objective, Pretrainer, TrainExample};
use crate::retrieval::{verbalize_kg, LocalKG};
use crate::rng::SeedStream;
use crate::text::{segment_documents, TokenVocab};

/// How the local graph reaches the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KgInput {
    Graph,
    /// Edges rendered as sentences after the text, with a dummy graph.
    Verbalized,
}

impl KgInput {
    pub fn name(self) -> &'static str {
        match self {
            KgInput::Graph => "graph",
            KgInput::Verbalized => "verbalized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub objective: Objective,
    pub scorer: Scorer,
    pub fusion: Fusion,
    pub kg_input: KgInput,
}

/// Every combination of objective, scorer, fusion and graph input.
pub fn full_grid() -> Vec<Cell> {
    let mut cells = Vec::new();
    for objective in [Objective::Joint, Objective::MlmOnly, Objective::LinkPredOnly] {
        for scorer in Scorer::ALL {
            for fusion in [Fusion::Bidirectional, Fusion::ConcatAtEnd] {
                for kg_input in [KgInput::Graph, KgInput::Verbalized] {
                    cells.push(Cell {
                        objective,
                        scorer,
                        fusion,
                        kg_input,
                    });
                }
            }
        }
    }
    cells
}

/// The four DistMult graph cells behind the objective and fusion comparisons.
pub fn directional_grid() -> Vec<Cell> {
    let cell = |objective, fusion| Cell {
        objective,
        scorer: Scorer::DistMult,
        fusion,
        kg_input: KgInput::Graph,
    };
    vec![
        cell(Objective::Joint, Fusion::Bidirectional),
        cell(Objective::Joint, Fusion::ConcatAtEnd),
        cell(Objective::MlmOnly, Fusion::Bidirectional),
        cell(Objective::LinkPredOnly, Fusion::Bidirectional),
    ]
}

pub fn grid_by_name(name: &str) -> Option<Vec<Cell>> {
    match name {
        "default" | "full" => Some(full_grid()),
        "directional" => Some(directional_grid()),
        _ => None,
    }
}

/// Inputs shared by every cell of one seed.
#[derive(Debug, Clone)]
pub struct Bench {
    pub world: SyntheticWorld,
    pub graph: KnowledgeGraph,
    pub tokens: TokenVocab,
    /// Pretraining examples; the first `n_heldout` are kept out of training.
    pub examples: Vec<TrainExample>,
    pub n_heldout: usize,
    pub queries: Vec<LpQuery>,
    pub skipped: usize,
    pub mcqa: [Vec<PreparedQuestion>; 3],
}

fn verbalize(ex: &TrainExample, g: &KnowledgeGraph, tokens: &TokenVocab, max_seq_len: usize) -> TrainExample {
    TrainExample {
        segment: verbalize_kg(&ex.segment, &ex.local, g, tokens, max_seq_len),
        local: LocalKG::dummy(),
    }
}

impl Bench {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let world = SyntheticWorld::generate(cfg.world()?)?;
        let model = cfg.model()?;
        let (max_seq_len, max_nodes) = (model.encoder.max_seq_len, model.encoder.max_nodes);
        let seeds = SeedStream::new(cfg.seed()?);
        let graph = world.knowledge_graph();
        let segments = segment_documents(&world.corpus(), max_seq_len);
        let tokens = TokenVocab::build(segments.iter().map(|s| s.text.as_str()), cfg.parse("data.min_token_freq")?);
        let examples = build_examples(&segments, &graph, &tokens, max_seq_len, max_nodes, seeds);
        let fraction: f64 = cfg.parse("ablation.holdout_fraction")?;
        let n_heldout = (fraction.clamp(0.0, 0.5) * examples.len() as f64) as usize;
        let test: Vec<Triplet> = world.text_only_facts().iter().filter_map(|f| world.triplet(&graph, f)).collect();
        let mut known: HashSet<Triplet> = graph.triplets().iter().copied().collect();
        known.extend(test.iter().copied());
        let (queries, skipped) = build_queries(&test, &examples, &known);
        let (train, dev, eval) = world.mcqa_splits();
        let prep = |qs| prepare(qs, &graph, &tokens, max_seq_len, max_nodes, seeds);
        let mcqa = [prep(&train)?, prep(&dev)?, prep(&eval)?];
        Ok(Self {
            world,
            graph,
            tokens,
            examples,
            n_heldout,
            queries,
            skipped,
            mcqa,
        })
    }

    pub fn sizes(&self) -> VocabSizes {
        VocabSizes {
            tokens: self.tokens.len(),
            entities: self.graph.num_entities(),
            relations: self.graph.relations().len(),
        }
    }

    pub fn heldout(&self) -> &[TrainExample] {
        &self.examples[..self.n_heldout]
    }

    pub fn train(&self) -> &[TrainExample] {
        &self.examples[self.n_heldout..]
    }

    /// The same bench with every local graph moved into the text.
    pub fn verbalized(&self, max_seq_len: usize) -> Self {
        let v = |ex: &TrainExample| verbalize(ex, &self.graph, &self.tokens, max_seq_len);
        let mcqa = self.mcqa.clone().map(|split| {
            split
                .into_iter()
                .map(|q| PreparedQuestion {
                    choices: q.choices.iter().map(v).collect(),
                    gold: q.gold,
                })
                .collect()
        });
        Self {
            examples: self.examples.iter().map(v).collect(),
            queries: Vec::new(),
            skipped: self.queries.len() + self.skipped,
            mcqa,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub seed: u64,
    pub objective: String,
    pub scorer: String,
    pub fusion: String,
    pub kg_input: String,
    pub heldout_mlm: Option<f64>,
    /// Not applicable without a graph.
    pub lp_mrr: Option<f64>,
    pub lp_hits_at_3: Option<f64>,
    pub mcqa_accuracy: Option<f64>,
    pub error: Option<String>,
}

struct Scores {
    heldout_mlm: f64,
    lp_mrr: Option<f64>,
    lp_hits_at_3: Option<f64>,
    mcqa_accuracy: f64,
}

fn run_scores(cfg: &RunConfig, bench: &Bench, cell: Cell) -> Result<Scores> {
    let mut mc = cfg.model()?;
    mc.encoder.fusion = cell.fusion;
    mc.scorer = cell.scorer;
    let mut pc = cfg.pretrain()?;
    pc.objective = cell.objective;
    let seeds = SeedStream::new(cfg.seed()?);
    let mut model = Model::<f32>::new(mc, bench.sizes(), seeds)?;
    let mut trainer = Pretrainer::new(pc.clone(), &model, seeds)?;
    trainer.run(&mut model, bench.train(), |_, _| Ok(()))?;
    let heldout_mlm = evaluate_mlm(&model, bench.heldout(), pc.mask_rate, seeds)?;
    let (lp_mrr, lp_hits_at_3) = match cell.kg_input {
        KgInput::Graph => {
            let r = eval_contextual(&model, &bench.examples, &bench.queries, bench.skipped)?;
            (Some(r.mrr), Some(r.hits_at_3))
        }
        KgInput::Verbalized => (None, None),
    };
    let [train, dev, test] = &bench.mcqa;
    finetune(&mut model, train, dev, &cfg.finetune()?, seeds)?;
    let mcqa_accuracy = evaluate(&model, test, "test")?.accuracy;
    Ok(Scores {
        heldout_mlm,
        lp_mrr,
        lp_hits_at_3,
        mcqa_accuracy,
    })
}

/// Pretrains, probes and finetunes one cell. Failures are recorded, not raised.
pub fn run_cell(cfg: &RunConfig, graph_bench: &Bench, text_bench: &Bench, cell: Cell) -> CellResult {
    let bench = match cell.kg_input {
        KgInput::Graph => graph_bench,
        KgInput::Verbalized => text_bench,
    };
    let outcome = run_scores(cfg, bench, cell);
    let ok = outcome.as_ref().ok();
    CellResult {
        seed: cfg.seed().unwrap_or_default(),
        objective: cell.objective.name().into(),
        scorer: cell.scorer.name().into(),
        fusion: cell.fusion.name().into(),
        kg_input: cell.kg_input.name().into(),
        heldout_mlm: ok.map(|s| s.heldout_mlm),
        lp_mrr: ok.and_then(|s| s.lp_mrr),
        lp_hits_at_3: ok.and_then(|s| s.lp_hits_at_3),
        mcqa_accuracy: ok.map(|s| s.mcqa_accuracy),
        error: outcome.err().map(|e| e.to_string()),
    }
}

/// Runs `cells` for every seed in `seeds`, building one bench per seed.
pub fn run_ablation(
    cfg: &RunConfig,
    cells: &[Cell],
    seeds: &[u64],
    mut on_row: impl FnMut(&CellResult),
) -> Result<Vec<CellResult>> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one cell and one seed".into()));
    }
    let mut rows = Vec::with_capacity(cells.len() * seeds.len());
    for &seed in seeds {
        let mut c = cfg.clone();
        c.set("seed", &seed.to_string(), cfg.provenance("seed"))?;
        let graph_bench = Bench::new(&c)?;
        let text_bench = if cells.iter().any(|x| x.kg_input == KgInput::Verbalized) {
            graph_bench.verbalized(c.model()?.encoder.max_seq_len)
        } else {
            graph_bench.clone()
        };
        for &cell in cells {
            let row = run_cell(&c, &graph_bench, &text_bench, cell);
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

fn cell_text(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

pub const TSV_HEADER: &str = "seed\tobjective\tscorer\tfusion\tkg_input\theldout_mlm\tlp_mrr\tlp_hits_at_3\tmcqa_accuracy\terror";

pub fn to_tsv(rows: &[CellResult]) -> String {
    let mut s = format!("{TSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.seed,
            r.objective,
            r.scorer,
            r.fusion,
            r.kg_input,
            cell_text(r.heldout_mlm),
            cell_text(r.lp_mrr),
            cell_text(r.lp_hits_at_3),
            cell_text(r.mcqa_accuracy),
            r.error.as_deref().unwrap_or("")
        );
    }
    s
}

/// Mean of `metric` over rows matching `pick`, skipping missing values.
pub fn mean_over(rows: &[CellResult], pick: impl Fn(&CellResult) -> bool, metric: impl Fn(&CellResult) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter(|r| pick(r)).filter_map(metric).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_has_every_combination_once() {
        let g = full_grid();
        assert_eq!(g.len(), 36);
        assert_eq!(g.iter().collect::<HashSet<_>>().len(), 36);
        assert!(directional_grid().iter().all(|c| g.contains(c)));
    }

    #[test]
    fn verbalized_cells_report_na_link_prediction() {
        let row = CellResult {
            seed: 0,
            objective: "joint".into(),
            scorer: "distmult".into(),
            fusion: "bidirectional".into(),
            kg_input: "verbalized".into(),
            heldout_mlm: Some(1.0),
            lp_mrr: None,
            lp_hits_at_3: None,
            mcqa_accuracy: Some(0.5),
            error: None,
        };
        let tsv = to_tsv(&[row]);
        let line = tsv.lines().nth(1).unwrap();
        assert_eq!(line.split('\t').nth(6), Some("NA"));
        assert_eq!(tsv.lines().next().unwrap().split('\t').count(), line.split('\t').count());
    }
}
