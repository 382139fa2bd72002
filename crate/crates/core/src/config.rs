//! Flat `key = value` run configuration with per-value provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::encoder::{EncoderConfig, Fusion};
use crate::error::{Error, Result};
use crate::eval::linkpred::BaselineConfig;
use crate::eval::synthetic::{Distractors, WorldConfig};
use crate::finetune::FinetuneConfig;
use crate::model::ModelConfig;
use crate::pretrain::heads::{NegativeTerm, Scorer};
use crate::pretrain::optim::OptimConfig;
use crate::pretrain::{Objective, PretrainConfig};

pub const SEED_ENV: &str = "DRAGONFORGE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Default,
    File,
    Env,
    Flag,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Default => "default",
            Provenance::File => "file",
            Provenance::Env => "env",
            Provenance::Flag => "flag",
        }
    }
}

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    /// Extra command-line spellings.
    pub aliases: &'static [&'static str],
}

macro_rules! keys {
    ($($name:literal = $default:literal, $help:literal $(, [$($alias:literal),*])?;)*) => {
        pub const KEYS: &[Key] = &[$(Key { name: $name, default: $default, help: $help, aliases: &[$($($alias),*)?] }),*];
    };
}

keys! {
    "seed" = "0", "root seed for every random stream";
    "model.n_text_layers" = "2", "text-only transformer layers before fusion";
    "model.n_fusion_layers" = "3", "fusion layers";
    "model.d_text" = "128", "token hidden size";
    "model.d_node" = "64", "node hidden size";
    "model.heads_text" = "4", "transformer attention heads";
    "model.heads_gnn" = "2", "graph attention heads";
    "model.d_ff" = "512", "transformer feed-forward size";
    "model.d_mint_hidden" = "400", "interaction perceptron hidden size";
    "model.dropout" = "0.1", "dropout rate in transformer layers";
    "model.max_seq_len" = "128", "maximum tokens per input including the interaction token";
    "model.max_nodes" = "32", "maximum entity nodes per local graph";
    "model.fusion" = "bidirectional", "bidirectional | concat_at_end", ["fusion"];
    "model.scorer" = "distmult", "distmult | transe | rotate", ["scorer"];
    "model.gamma" = "0", "margin added to link scores";
    "model.negative_term" = "verbatim", "verbatim | bounded negative-sample term";
    "data.min_token_freq" = "2", "minimum corpus count for a vocabulary token";
    "data.inverse_relations" = "false", "add inverse relation types when loading a graph";
    "pretrain.objective" = "joint", "joint | mlm_only | linkpred_only", ["objective"];
    "pretrain.mask_rate" = "0.15", "token masking probability";
    "pretrain.edge_drop_rate" = "0.15", "edge holdout probability";
    "pretrain.n_negatives" = "16", "negatives per held-out edge";
    "pretrain.batch_size" = "8", "examples per step";
    "pretrain.steps" = "200", "optimizer steps", ["steps"];
    "pretrain.lr_lm" = "3e-4", "learning rate of the text stack";
    "pretrain.lr_other" = "1e-3", "learning rate of every other parameter";
    "pretrain.warmup_ratio" = "0.1", "fraction of steps with linear warmup";
    "pretrain.max_grad_norm" = "1.0", "global gradient norm clip, 0 disables";
    "pretrain.radam" = "false", "use rectified Adam";
    "pretrain.checkpoint_every" = "0", "save a checkpoint every k steps, 0 only at the end";
    "pretrain.timing" = "false", "record wall-clock seconds in metrics";
    "finetune.epochs" = "10", "finetuning epochs", ["epochs"];
    "finetune.batch_size" = "8", "questions per step";
    "finetune.lr_lm" = "3e-4", "learning rate of the text stack";
    "finetune.lr_other" = "1e-3", "learning rate of every other parameter";
    "finetune.warmup_ratio" = "0.1", "fraction of steps with linear warmup";
    "finetune.freeze_lm_epochs" = "4", "leading epochs with the text stack frozen";
    "finetune.train_fraction" = "1.0", "fraction of training questions used", ["train-fraction"];
    "finetune.freeze_node_emb" = "true", "keep entity embeddings fixed during finetuning";
    "finetune.patience" = "0", "early-stop after this many epochs without dev gain, 0 disables";
    "world.n_entities" = "500", "synthetic entities";
    "world.n_relations" = "8", "synthetic relations";
    "world.n_facts" = "5000", "synthetic facts";
    "world.leak_rate" = "0.3", "share of facts kept to a single modality";
    "world.n_clusters" = "10", "latent entity clusters";
    "world.facts_per_doc" = "4", "facts chained into one document";
    "world.n_choices" = "4", "answer choices per synthetic question";
    "world.distractors" = "same_cluster", "random | hard | same_cluster";
    "baseline.dim" = "32", "embedding size of the graph-only baseline";
    "baseline.epochs" = "30", "baseline training epochs";
    "baseline.batch_size" = "128", "baseline triplets per step";
    "baseline.n_negatives" = "8", "baseline negatives per triplet";
    "baseline.lr" = "0.01", "baseline learning rate";
    "ablation.seeds" = "0", "comma-separated seeds for the ablation grid";
    "ablation.holdout_fraction" = "0.1", "share of corpus segments kept out of pretraining";
}

pub fn key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Command-line flag for a key: dots and underscores become dashes.
pub fn flag_name(key: &str) -> String {
    key.replace(['.', '_'], "-")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, (String, Provenance)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|k| (k.name, (k.default.to_string(), Provenance::Default))).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, name: &str, value: &str, from: Provenance) -> Result<()> {
        let k = key(name).ok_or_else(|| Error::Config(format!("unknown key `{name}`")))?;
        self.values.insert(k.name, (value.trim().to_string(), from));
        Ok(())
    }

    pub fn get(&self, name: &str) -> &str {
        &self.values.get(name).unwrap_or_else(|| panic!("unregistered key {name}")).0
    }

    pub fn provenance(&self, name: &str) -> Provenance {
        self.values[name].1
    }

    pub fn parse<T: FromStr>(&self, name: &str) -> Result<T> {
        let v = self.get(name);
        v.parse().map_err(|_| Error::Config(format!("invalid value `{v}` for `{name}`")))
    }

    fn choice<T>(&self, name: &str, f: impl Fn(&str) -> Option<T>) -> Result<T> {
        let v = self.get(name);
        f(v).ok_or_else(|| Error::Config(format!("invalid value `{v}` for `{name}`")))
    }

    /// Applies `key = value` lines. `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, origin: &str, from: Provenance) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                msg,
            };
            let (k, v) = line.split_once('=').ok_or_else(|| parse_err("expected key = value".into()))?;
            self.set(k.trim(), v, from).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_text(&text, &path.display().to_string(), Provenance::File)
    }

    /// Applies the seed environment override if present.
    pub fn merge_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.set("seed", &v, Provenance::Env)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.merge_text(text, "config", Provenance::File)?;
        Ok(c)
    }

    /// Canonical text: every key in sorted order, provenance as a trailing comment.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, (v, p)) in &self.values {
            let _ = writeln!(s, "{k} = {v}  # {}", p.name());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?.encoder.validate()?;
        self.pretrain()?.validate()?;
        self.finetune()?;
        self.world()?;
        self.baseline()?;
        self.seeds()?;
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn model(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            encoder: EncoderConfig {
                n_text_layers: self.parse("model.n_text_layers")?,
                n_fusion_layers: self.parse("model.n_fusion_layers")?,
                d_text: self.parse("model.d_text")?,
                d_node: self.parse("model.d_node")?,
                heads_text: self.parse("model.heads_text")?,
                heads_gnn: self.parse("model.heads_gnn")?,
                d_ff: self.parse("model.d_ff")?,
                d_mint_hidden: self.parse("model.d_mint_hidden")?,
                dropout: self.parse("model.dropout")?,
                max_seq_len: self.parse("model.max_seq_len")?,
                max_nodes: self.parse("model.max_nodes")?,
                fusion: self.choice("model.fusion", Fusion::parse)?,
            },
            scorer: self.choice("model.scorer", Scorer::parse)?,
            gamma: self.parse("model.gamma")?,
            negative_term: self.choice("model.negative_term", NegativeTerm::parse)?,
        })
    }

    pub fn pretrain(&self) -> Result<PretrainConfig> {
        Ok(PretrainConfig {
            mask_rate: self.parse("pretrain.mask_rate")?,
            edge_drop_rate: self.parse("pretrain.edge_drop_rate")?,
            n_negatives: self.parse("pretrain.n_negatives")?,
            objective: self.choice("pretrain.objective", Objective::parse)?,
            batch_size: self.parse("pretrain.batch_size")?,
            steps: self.parse("pretrain.steps")?,
            optim: OptimConfig {
                lr_lm: self.parse("pretrain.lr_lm")?,
                lr_other: self.parse("pretrain.lr_other")?,
                warmup_ratio: self.parse("pretrain.warmup_ratio")?,
                max_grad_norm: self.parse("pretrain.max_grad_norm")?,
                radam: self.parse("pretrain.radam")?,
                ..OptimConfig::default()
            },
            timing: self.parse("pretrain.timing")?,
        })
    }

    pub fn finetune(&self) -> Result<FinetuneConfig> {
        Ok(FinetuneConfig {
            epochs: self.parse("finetune.epochs")?,
            batch_size: self.parse("finetune.batch_size")?,
            lr_lm: self.parse("finetune.lr_lm")?,
            lr_other: self.parse("finetune.lr_other")?,
            warmup_ratio: self.parse("finetune.warmup_ratio")?,
            freeze_lm_epochs: self.parse("finetune.freeze_lm_epochs")?,
            train_fraction: self.parse("finetune.train_fraction")?,
            freeze_node_emb: self.parse("finetune.freeze_node_emb")?,
            patience: self.parse("finetune.patience")?,
        })
    }

    pub fn world(&self) -> Result<WorldConfig> {
        Ok(WorldConfig {
            n_entities: self.parse("world.n_entities")?,
            n_relations: self.parse("world.n_relations")?,
            n_facts: self.parse("world.n_facts")?,
            leak_rate: self.parse("world.leak_rate")?,
            n_clusters: self.parse("world.n_clusters")?,
            facts_per_doc: self.parse("world.facts_per_doc")?,
            n_choices: self.parse("world.n_choices")?,
            distractors: self.choice("world.distractors", |s| match s {
                "random" => Some(Distractors::Random),
                "hard" => Some(Distractors::Hard),
                "same_cluster" => Some(Distractors::SameCluster),
                _ => None,
            })?,
            seed: self.seed()?,
        })
    }

    pub fn baseline(&self) -> Result<BaselineConfig> {
        Ok(BaselineConfig {
            dim: self.parse("baseline.dim")?,
            epochs: self.parse("baseline.epochs")?,
            batch_size: self.parse("baseline.batch_size")?,
            n_negatives: self.parse("baseline.n_negatives")?,
            lr: self.parse("baseline.lr")?,
        })
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        self.get("ablation.seeds")
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("invalid seed `{s}` in ablation.seeds"))))
            .collect()
    }

    /// Writes the model-related keys of `m` back into this config.
    pub fn set_model(&mut self, m: &ModelConfig, from: Provenance) -> Result<()> {
        let e = &m.encoder;
        let pairs: [(&str, String); 15] = [
            ("model.n_text_layers", e.n_text_layers.to_string()),
            ("model.n_fusion_layers", e.n_fusion_layers.to_string()),
            ("model.d_text", e.d_text.to_string()),
            ("model.d_node", e.d_node.to_string()),
            ("model.heads_text", e.heads_text.to_string()),
            ("model.heads_gnn", e.heads_gnn.to_string()),
            ("model.d_ff", e.d_ff.to_string()),
            ("model.d_mint_hidden", e.d_mint_hidden.to_string()),
            ("model.dropout", e.dropout.to_string()),
            ("model.max_seq_len", e.max_seq_len.to_string()),
            ("model.max_nodes", e.max_nodes.to_string()),
            ("model.fusion", e.fusion.name().to_string()),
            ("model.scorer", m.scorer.name().to_string()),
            ("model.gamma", m.gamma.to_string()),
            ("model.negative_term", m.negative_term.name().to_string()),
        ];
        for (k, v) in pairs {
            self.set(k, &v, from)?;
        }
        Ok(())
    }
}
