//! Multiple-choice finetuning with attention pooling.

pub mod pool;

use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::eval::synthetic::McqaExample;
use crate::kg::KnowledgeGraph;
use crate::model::Model;
use crate::numerics::{Binding, ParamGroup, ParamStore, Real, Tape, Var};
use crate::pretrain::optim::{Adam, OptimConfig};
use crate::pretrain::TrainExample;
use crate::retrieval::{link_parts, retrieve_local_kg};
use crate::rng::{Rng, SeedStream};
use crate::text::TokenVocab;

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_lm: f64,
    pub lr_other: f64,
    pub warmup_ratio: f64,
    /// Text-stack parameters stay fixed for this many leading epochs.
    pub freeze_lm_epochs: usize,
    pub train_fraction: f64,
    /// Keep the entity embedding table fixed for the whole run.
    pub freeze_node_emb: bool,
    /// Stop after this many epochs without a dev improvement; 0 disables.
    pub patience: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            lr_lm: 3e-4,
            lr_other: 1e-3,
            warmup_ratio: 0.1,
            freeze_lm_epochs: 4,
            train_fraction: 1.0,
            freeze_node_emb: true,
            patience: 0,
        }
    }
}

/// One question with a retrieved input per answer choice.
#[derive(Debug, Clone)]
pub struct PreparedQuestion {
    pub choices: Vec<TrainExample>,
    pub gold: usize,
}

pub fn load_mcqa(path: &Path) -> Result<Vec<McqaExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: McqaExample = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

/// Links and retrieves a local graph for every (question, choice) pair.
pub fn prepare(
    questions: &[McqaExample],
    g: &KnowledgeGraph,
    tokens: &TokenVocab,
    max_seq_len: usize,
    max_nodes: usize,
    seeds: SeedStream,
) -> Result<Vec<PreparedQuestion>> {
    questions
        .iter()
        .enumerate()
        .map(|(i, q)| {
            if q.choices.len() < 2 {
                return Err(Error::Data(format!("question {i} has fewer than two choices")));
            }
            if q.gold >= q.choices.len() {
                return Err(Error::Data(format!("question {i}: gold index {} out of range", q.gold)));
            }
            let choices = q
                .choices
                .iter()
                .enumerate()
                .map(|(c, choice)| {
                    let (segment, linked) = link_parts(&[&q.question, choice], g.entities(), tokens, max_seq_len);
                    let mut rng = seeds.rng_at("mcqa/retrieval", (i * 1024 + c) as u64);
                    TrainExample {
                        segment,
                        local: retrieve_local_kg(&linked, g, max_nodes, &mut rng),
                    }
                })
                .collect();
            Ok(PreparedQuestion { choices, gold: q.gold })
        })
        .collect()
}

/// `[1, choices]` logits for one question on a shared tape.
pub fn choice_logits<'t, F: Real>(
    model: &Model<F>,
    p: &Binding<'t, '_, F>,
    q: &PreparedQuestion,
    mode: Mode,
    mut rng: Option<&mut Rng>,
) -> Result<Var<'t, F>> {
    let mut logits = Vec::with_capacity(q.choices.len());
    for c in &q.choices {
        let out = model.encoder.encode(p, &c.segment, &c.local, mode, rng.as_deref_mut())?;
        logits.push(model.pool.pool(p, &out)?.logit);
    }
    Ok(Var::concat(&logits, 1)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub split: String,
    pub n: usize,
    pub accuracy: f64,
    /// How often each choice position was predicted.
    pub per_choice_count: Vec<usize>,
}

pub fn predict<F: Real>(model: &Model<F>, q: &PreparedQuestion) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let p = Binding::new(&tape, &model.store);
    let logits = choice_logits(model, &p, q, Mode::Eval, None)?;
    Ok(logits.to_vec().into_iter().map(Real::to_f64_lossy).collect())
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

pub fn evaluate<F: Real>(model: &Model<F>, questions: &[PreparedQuestion], split: &str) -> Result<AccuracyReport> {
    let width = questions.iter().map(|q| q.choices.len()).max().unwrap_or(0);
    let mut per_choice_count = vec![0; width];
    let mut correct = 0;
    for q in questions {
        let pred = argmax(&predict(model, q)?);
        per_choice_count[pred] += 1;
        correct += usize::from(pred == q.gold);
    }
    Ok(AccuracyReport {
        split: split.to_string(),
        n: questions.len(),
        accuracy: if questions.is_empty() { 0.0 } else { correct as f64 / questions.len() as f64 },
        per_choice_count,
    })
}

/// Seeded subset of `⌈fraction·n⌉` indices, in ascending order.
pub fn subsample(n: usize, fraction: f64, seeds: SeedStream) -> Vec<usize> {
    let k = ((fraction.clamp(0.0, 1.0) * n as f64).ceil() as usize).min(n);
    let mut idx = sample(&mut seeds.rng("finetune/subsample"), n, k).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub lm_frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub n_train_used: usize,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
}

/// Trains the pooling head and encoder with softmax cross-entropy over choices.
/// The model ends at the parameters of the best dev epoch.
pub fn finetune<F: Real>(
    model: &mut Model<F>,
    train: &[PreparedQuestion],
    dev: &[PreparedQuestion],
    cfg: &FinetuneConfig,
    seeds: SeedStream,
) -> Result<FinetuneReport> {
    if train.is_empty() {
        return Err(Error::Data("empty finetuning set".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("finetuning needs at least one epoch".into()));
    }
    let used = subsample(train.len(), cfg.train_fraction, seeds);
    let batch = cfg.batch_size.max(1);
    let per_epoch = used.len().div_ceil(batch);
    let mut opt = Adam::new(
        OptimConfig {
            lr_lm: cfg.lr_lm,
            lr_other: cfg.lr_other,
            warmup_ratio: cfg.warmup_ratio,
            total_steps: per_epoch * cfg.epochs,
            ..OptimConfig::default()
        },
        &model.store,
    );
    let pinned: Vec<_> = if cfg.freeze_node_emb { model.store.id("node.emb").into_iter().collect() } else { Vec::new() };
    let mut best: Option<(f64, usize, ParamStore<F>)> = None;
    let mut epochs = Vec::new();
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let frozen = epoch < cfg.freeze_lm_epochs;
        let mut rng = seeds.rng_at("finetune/epoch", epoch as u64);
        let mut order = used.clone();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            model.store.zero_grad();
            for &i in chunk {
                let q = &train[i];
                let tape = Tape::new();
                let grads = {
                    let p = Binding::new(&tape, &model.store).freezing(frozen.then_some(ParamGroup::Lm)).pinning(&pinned);
                    let logits = choice_logits(model, &p, q, Mode::Train, Some(&mut rng))?;
                    let loss = logits.cross_entropy(&[q.gold])?;
                    total += loss.item().to_f64_lossy();
                    loss.scale(F::of(1.0 / chunk.len() as f64))?.backward()?;
                    p.grads()
                };
                model.store.accumulate(&grads);
            }
            opt.step(&mut model.store);
            if !model.store.all_finite() {
                return Err(Error::Numeric {
                    layer: "optimizer".into(),
                    source: crate::numerics::TensorError::NonFinite { op: "adam" },
                });
            }
        }
        model.store.zero_grad();
        let dev_accuracy = if dev.is_empty() { 0.0 } else { evaluate(model, dev, "dev")?.accuracy };
        epochs.push(EpochRecord {
            epoch,
            train_loss: total / used.len() as f64,
            dev_accuracy,
            lm_frozen: frozen,
        });
        if best.as_ref().is_none_or(|b| dev_accuracy > b.0) {
            best = Some((dev_accuracy, epoch, model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
    }
    let (best_dev_accuracy, best_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    Ok(FinetuneReport {
        n_train_used: used.len(),
        best_epoch,
        best_dev_accuracy,
        epochs,
    })
}
