//! Self-supervised corruption, task heads, and the joint training loop.

pub mod corrupt;
pub mod heads;
pub mod optim;

use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::model::Model;
use crate::numerics::{Binding, Real, Tape, TensorError, Var};
use crate::retrieval::{link_entities, retrieve_local_kg, LocalKG};
use crate::rng::{Rng, SeedStream};
use crate::text::{RawSegment, TextSegment, TokenVocab};

use corrupt::{apply_masking, hold_out_edges};
use optim::{Adam, OptimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Joint,
    MlmOnly,
    LinkPredOnly,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Joint, Objective::MlmOnly, Objective::LinkPredOnly];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Joint => "joint",
            Objective::MlmOnly => "mlm_only",
            Objective::LinkPredOnly => "linkpred_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == s)
    }

    pub fn uses_mlm(self) -> bool {
        self != Objective::LinkPredOnly
    }

    pub fn uses_linkpred(self) -> bool {
        self != Objective::MlmOnly
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub mask_rate: f64,
    pub edge_drop_rate: f64,
    pub n_negatives: usize,
    pub objective: Objective,
    pub batch_size: usize,
    pub steps: usize,
    pub optim: OptimConfig,
    /// Record wall-clock seconds in metrics; off keeps metrics byte-reproducible.
    pub timing: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            edge_drop_rate: 0.15,
            n_negatives: 16,
            objective: Objective::Joint,
            batch_size: 8,
            steps: 200,
            optim: OptimConfig::default(),
            timing: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| r > 0.0 && r < 1.0;
        if !rate_ok(self.mask_rate) || !rate_ok(self.edge_drop_rate) {
            return Err(Error::Config("mask_rate and edge_drop_rate must lie in (0, 1)".into()));
        }
        if self.n_negatives == 0 || self.batch_size == 0 {
            return Err(Error::Config("n_negatives and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// An aligned text segment and its retrieved local graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub segment: TextSegment,
    pub local: LocalKG,
}

/// Links and retrieves a local graph for every segment, each with its own seeded stream.
pub fn build_examples(
    segments: &[RawSegment],
    g: &KnowledgeGraph,
    tokens: &TokenVocab,
    max_seq_len: usize,
    max_nodes: usize,
    seeds: SeedStream,
) -> Vec<TrainExample> {
    segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (segment, linked) = link_entities(&s.text, g.entities(), tokens, max_seq_len);
            let local = retrieve_local_kg(&linked, g, max_nodes, &mut seeds.rng_at("retrieval", i as u64));
            TrainExample { segment, local }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub loss_mlm: f64,
    pub loss_lp: f64,
    pub lr_lm: f64,
    pub lr_other: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

impl StepMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

struct Corrupted {
    segment: TextSegment,
    local: LocalKG,
    plan: corrupt::MaskingPlan,
    holdout: corrupt::EdgeHoldout,
}

fn corrupt_example(ex: &TrainExample, cfg: &PretrainConfig, rng: &mut Rng) -> Corrupted {
    let (segment, plan) = if cfg.objective.uses_mlm() {
        apply_masking(&ex.segment, cfg.mask_rate, rng)
    } else {
        (ex.segment.clone(), Default::default())
    };
    let (local, holdout) = if cfg.objective.uses_linkpred() {
        hold_out_edges(&ex.local, cfg.edge_drop_rate, cfg.n_negatives, rng)
    } else {
        (ex.local.clone(), Default::default())
    };
    Corrupted {
        segment,
        local,
        plan,
        holdout,
    }
}

pub struct Pretrainer {
    pub config: PretrainConfig,
    pub optimizer: Adam,
    seeds: SeedStream,
    step: usize,
}

impl Pretrainer {
    pub fn new<F: Real>(config: PretrainConfig, model: &Model<F>, seeds: SeedStream) -> Result<Self> {
        config.validate()?;
        let optim = OptimConfig {
            total_steps: config.steps,
            ..config.optim.clone()
        };
        Ok(Self {
            optimizer: Adam::new(optim, &model.store),
            config,
            seeds,
            step: 0,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// One optimizer step on a seeded batch. On a numeric failure the parameters
    /// are left exactly as they were before the step.
    pub fn train_step<F: Real>(&mut self, model: &mut Model<F>, examples: &[TrainExample]) -> Result<StepMetrics> {
        if examples.is_empty() {
            return Err(Error::Data("no training examples".into()));
        }
        let started = Instant::now();
        let mut rng = self.seeds.rng_at("pretrain/step", self.step as u64);
        let k = self.config.batch_size.min(examples.len());
        let mut batch: Vec<usize> = sample(&mut rng, examples.len(), k).into_vec();
        batch.sort_unstable();
        let corrupted: Vec<Corrupted> = batch
            .iter()
            .map(|&i| corrupt_example(&examples[i], &self.config, &mut rng))
            .collect();
        let n_mlm = corrupted.iter().filter(|c| !c.plan.is_empty()).count();
        let n_lp = corrupted.iter().filter(|c| !c.holdout.is_empty()).count();

        model.store.zero_grad();
        let (mut sum_mlm, mut sum_lp) = (0.0, 0.0);
        for c in &corrupted {
            let tape = Tape::new();
            let grads = {
                let p = Binding::new(&tape, &model.store);
                let out = model.encoder.encode(&p, &c.segment, &c.local, Mode::Train, Some(&mut rng))?;
                let mut terms: Vec<Var<F>> = Vec::new();
                if let Some(l) = model.mlm.loss(&p, &c.plan, out.tokens)? {
                    sum_mlm += l.item().to_f64_lossy();
                    terms.push(l.scale(F::of(1.0 / n_mlm as f64))?);
                }
                if let Some(l) = model.lp.loss(&p, &c.holdout, out.nodes)? {
                    sum_lp += l.item().to_f64_lossy();
                    terms.push(l.scale(F::of(1.0 / n_lp as f64))?);
                }
                let Some((first, rest)) = terms.split_first() else { continue };
                let total = rest.iter().try_fold(*first, |acc, t| acc.add(*t))?;
                total.backward()?;
                p.grads()
            };
            model.store.accumulate(&grads);
        }
        let loss_mlm = if n_mlm > 0 { sum_mlm / n_mlm as f64 } else { 0.0 };
        let loss_lp = if n_lp > 0 { sum_lp / n_lp as f64 } else { 0.0 };
        let loss = loss_mlm + loss_lp;
        let grads_finite = model
            .store
            .iter()
            .all(|(_, p)| p.tensor.grad().is_none_or(|g| g.iter().all(|x| x.is_finite())));
        if !loss.is_finite() || !grads_finite {
            return Err(Error::Numeric {
                layer: "loss".into(),
                source: TensorError::NonFinite { op: "backward" },
            });
        }
        let snapshot = model.store.clone();
        let stats = self.optimizer.step(&mut model.store);
        if !model.store.all_finite() {
            model.store = snapshot;
            return Err(Error::Numeric {
                layer: "optimizer".into(),
                source: TensorError::NonFinite { op: "adam" },
            });
        }
        model.store.zero_grad();
        let metrics = StepMetrics {
            step: self.step,
            loss,
            loss_mlm,
            loss_lp,
            lr_lm: stats.lr_lm,
            lr_other: stats.lr_other,
            grad_norm: stats.grad_norm,
            seconds: if self.config.timing { started.elapsed().as_secs_f64() } else { 0.0 },
        };
        self.step += 1;
        Ok(metrics)
    }

    /// Runs the remaining steps, handing each record to `on_step`.
    pub fn run<F: Real>(
        &mut self,
        model: &mut Model<F>,
        examples: &[TrainExample],
        mut on_step: impl FnMut(&StepMetrics, &Model<F>) -> Result<()>,
    ) -> Result<Vec<StepMetrics>> {
        let mut all = Vec::with_capacity(self.config.steps);
        while self.step < self.config.steps {
            let m = self.train_step(model, examples)?;
            on_step(&m, model)?;
            all.push(m);
        }
        Ok(all)
    }
}

/// Mean masked-token loss on `examples` with masks drawn from a fixed stream, in eval mode.
pub fn evaluate_mlm<F: Real>(model: &Model<F>, examples: &[TrainExample], mask_rate: f64, seeds: SeedStream) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, ex) in examples.iter().enumerate() {
        let mut rng = seeds.rng_at("eval/mlm", i as u64);
        let (seg, plan) = apply_masking(&ex.segment, mask_rate, &mut rng);
        let tape = Tape::new();
        let p = Binding::new(&tape, &model.store);
        let out = model.encoder.encode(&p, &seg, &ex.local, Mode::Eval, None)?;
        if let Some(l) = model.mlm.loss(&p, &plan, out.tokens)? {
            total += l.item().to_f64_lossy();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}
