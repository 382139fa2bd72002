//! Link-prediction evaluation with contextualized or static embeddings.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::encoder::{Initializer, Mode};
use crate::error::{Error, Result};
use crate::eval::ranking::{rank_of, RankingReport};
use crate::kg::{KnowledgeGraph, Triplet};
use crate::model::Model;
use crate::numerics::{Binding, ParamGroup, ParamId, ParamStore, Real, Tape, Tensor};
use crate::pretrain::optim::{Adam, OptimConfig};
use crate::pretrain::TrainExample;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    /// Static entity embeddings, no text.
    KgOnly,
    /// Node vectors contextualized by the aligned text segment.
    KgPlusText,
}

/// A test triplet placed in the local graph of a segment that mentions both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct LpQuery {
    pub triplet: Triplet,
    pub example: usize,
    pub head: usize,
    pub tail: usize,
    /// Local indices of candidate tails: every entity node except the query head.
    pub candidates: Vec<usize>,
    /// Candidates forming another known-true triplet with the query.
    pub excluded: Vec<bool>,
}

/// Builds filtered queries. `known` holds every true triplet (graph plus test set).
pub fn build_queries(
    test: &[Triplet],
    examples: &[TrainExample],
    known: &HashSet<Triplet>,
) -> (Vec<LpQuery>, usize) {
    let mut containing: BTreeMap<crate::kg::EntityId, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        for n in &ex.local.nodes {
            if let crate::retrieval::LocalNode::Entity(e) = n {
                containing.entry(*e).or_default().push(i);
            }
        }
    }
    let mut queries = Vec::new();
    let mut skipped = 0;
    for t in test {
        let (Some(hs), Some(ts)) = (containing.get(&t.head), containing.get(&t.tail)) else {
            skipped += 1;
            continue;
        };
        let Some(&ex) = hs.iter().find(|i| ts.binary_search(i).is_ok()) else {
            skipped += 1;
            continue;
        };
        let local = &examples[ex].local;
        let head = local.index_of(t.head).expect("head present");
        let tail = local.index_of(t.tail).expect("tail present");
        let candidates: Vec<usize> = (1..local.nodes.len())
            .filter(|&i| local.entity(i).is_some() && (i != head || i == tail))
            .collect();
        let excluded = candidates
            .iter()
            .map(|&c| {
                c != tail
                    && known.contains(&Triplet {
                        head: t.head,
                        rel: t.rel,
                        tail: local.entity(c).expect("entity"),
                    })
            })
            .collect();
        queries.push(LpQuery {
            triplet: *t,
            example: ex,
            head,
            tail,
            candidates,
            excluded,
        });
    }
    (queries, skipped)
}

fn target_position(q: &LpQuery) -> usize {
    q.candidates.iter().position(|&c| c == q.tail).expect("tail is a candidate")
}

/// Ranks with the model's link-prediction head over contextualized node vectors.
pub fn eval_contextual<F: Real>(
    model: &Model<F>,
    examples: &[TrainExample],
    queries: &[LpQuery],
    skipped: usize,
) -> Result<RankingReport> {
    let mut by_example: BTreeMap<usize, Vec<&LpQuery>> = BTreeMap::new();
    for q in queries {
        by_example.entry(q.example).or_default().push(q);
    }
    let mut ranks = Vec::with_capacity(queries.len());
    for (ex, qs) in by_example {
        let tape = Tape::new();
        let p = Binding::new(&tape, &model.store);
        let e = &examples[ex];
        let out = model.encoder.encode(&p, &e.segment, &e.local, Mode::Eval, None)?;
        for q in qs {
            let k = q.candidates.len();
            let heads = out.nodes.gather_rows(&vec![q.head; k])?;
            let tails = out.nodes.gather_rows(&q.candidates)?;
            let scores = model.lp.score(&p, heads, &vec![q.triplet.rel.0; k], tails)?;
            let scores: Vec<f64> = scores.to_vec().into_iter().map(Real::to_f64_lossy).collect();
            ranks.push(rank_of(&scores, target_position(q), &q.excluded));
        }
    }
    Ok(RankingReport::from_ranks(&ranks, skipped, true))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_negatives: usize,
    pub lr: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            epochs: 30,
            batch_size: 128,
            n_negatives: 8,
            lr: 0.01,
        }
    }
}

/// Standalone DistMult over static entity embeddings trained on graph triplets.
#[derive(Debug, Clone)]
pub struct DistMultBaseline {
    pub store: ParamStore<f64>,
    entities: ParamId,
    relations: ParamId,
}

impl DistMultBaseline {
    pub fn train(g: &KnowledgeGraph, cfg: &BaselineConfig, seeds: SeedStream) -> Result<Self> {
        let n_ent = g.num_entities();
        if n_ent < 2 || g.triplets().is_empty() {
            return Err(Error::Data("baseline needs at least two entities and one triplet".into()));
        }
        let mut store = ParamStore::new();
        let mut init = Initializer {
            store: &mut store,
            seeds,
        };
        let entities = init.normal("baseline.entities", &[n_ent, cfg.dim], 0.1, ParamGroup::Other)?;
        let relations = init.normal("baseline.relations", &[g.relations().len(), cfg.dim], 0.1, ParamGroup::Other)?;
        let mut model = Self {
            store,
            entities,
            relations,
        };
        let batch = cfg.batch_size.max(1);
        let steps = cfg.epochs * g.triplets().len().div_ceil(batch);
        let mut opt = Adam::new(
            OptimConfig {
                lr_lm: cfg.lr,
                lr_other: cfg.lr,
                warmup_ratio: 0.0,
                total_steps: steps,
                max_grad_norm: 0.0,
                ..OptimConfig::default()
            },
            &model.store,
        );
        let mut rng = seeds.rng("baseline/train");
        let mut order: Vec<Triplet> = g.triplets().to_vec();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                let (mut h, mut r, mut t, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                for tr in chunk {
                    h.push(tr.head.0);
                    r.push(tr.rel.0);
                    t.push(tr.tail.0);
                    y.push(1.0);
                    for _ in 0..cfg.n_negatives {
                        let c = rng.random_range(0..n_ent);
                        let (nh, nt) = if rng.random::<bool>() { (c, tr.tail.0) } else { (tr.head.0, c) };
                        h.push(nh);
                        r.push(tr.rel.0);
                        t.push(nt);
                        y.push(-1.0 / cfg.n_negatives as f64);
                    }
                }
                model.store.zero_grad();
                let tape = Tape::new();
                let grads = {
                    let p = Binding::new(&tape, &model.store);
                    let ent = p.var(model.entities);
                    let rel = p.var(model.relations);
                    let s = ent.gather_rows(&h)?.mul(rel.gather_rows(&r)?)?.mul(ent.gather_rows(&t)?)?.sum_axis(1)?;
                    // Positives weigh 1, each negative 1/n: -log σ(y·s) with the sign in y.
                    let sign: Vec<f64> = y.iter().map(|v: &f64| v.signum()).collect();
                    let weight: Vec<f64> = y.iter().map(|v: &f64| v.abs()).collect();
                    let signed = s.mul(tape.constant(Tensor::new(vec![sign.len()], sign)?))?;
                    let loss = signed
                        .log_sigmoid()?
                        .mul(tape.constant(Tensor::new(vec![weight.len()], weight)?))?
                        .sum()?
                        .scale(-1.0 / chunk.len() as f64)?;
                    loss.backward()?;
                    p.grads()
                };
                model.store.accumulate(&grads);
                opt.step(&mut model.store);
            }
        }
        model.store.zero_grad();
        Ok(model)
    }

    pub fn score(&self, head: usize, rel: usize, tail: usize) -> f64 {
        let e = self.store.tensor(self.entities);
        let r = self.store.tensor(self.relations);
        e.row(head).iter().zip(r.row(rel)).zip(e.row(tail)).map(|((a, b), c)| a * b * c).sum()
    }

    pub fn evaluate(&self, examples: &[TrainExample], queries: &[LpQuery], skipped: usize) -> RankingReport {
        let ranks: Vec<f64> = queries
            .iter()
            .map(|q| {
                let local = &examples[q.example].local;
                let scores: Vec<f64> = q
                    .candidates
                    .iter()
                    .map(|&c| self.score(q.triplet.head.0, q.triplet.rel.0, local.entity(c).expect("entity").0))
                    .collect();
                rank_of(&scores, target_position(q), &q.excluded)
            })
            .collect();
        RankingReport::from_ranks(&ranks, skipped, true)
    }
}
