//! The `dragonforge` command line.
//!
//! Every config key is also a flag: `model.d_text` becomes `--model-d-text`.
//! Precedence is flags, then `DRAGONFORGE_SEED`, then `--config`, then defaults.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::checkpoint::{Checkpoint, CheckpointRef};
use crate::config::{flag_name, Provenance, RunConfig, KEYS};
use crate::encoder::VocabSizes;
use crate::error::{Error, Result};
use crate::eval::ablation::{grid_by_name, run_ablation, to_tsv};
use crate::eval::attention::{dump_attention, to_json_lines};
use crate::eval::linkpred::{build_queries, eval_contextual, DistMultBaseline};
use crate::eval::synthetic::{McqaExample, SyntheticWorld};
use crate::finetune::{evaluate, finetune, load_mcqa, prepare};
use crate::kg::{load_kg, KnowledgeGraph, LoadOptions, Triplet};
use crate::model::Model;
use crate::pretrain::{build_examples, Pretrainer, TrainExample};
use crate::retrieval::{link_entities, link_parts, retrieve_local_kg};
use crate::rng::SeedStream;
use crate::text::{segment_corpus, segment_documents, RawSegment, TokenVocab};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric { .. } | Error::Tensor(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("PATH").value_parser(clap::value_parser!(PathBuf)).help(help)
}

fn command() -> Command {
    let mut config_args: Vec<Arg> = vec![
        path_arg("config", "key = value file applied before flags"),
        Arg::new("out").long("out").value_name("DIR").default_value("out").value_parser(clap::value_parser!(PathBuf)).help("output directory"),
    ];
    for k in KEYS {
        let mut a = Arg::new(k.name).long(flag_name(k.name)).value_name("VALUE").help(format!("{} [default: {}]", k.help, k.default));
        for alias in k.aliases {
            a = a.visible_alias(*alias);
        }
        config_args.push(a);
    }
    let sub = |name: &'static str, about: &'static str| Command::new(name).about(about).args(config_args.clone());
    let graph_args = || {
        [
            path_arg("kg", "triplet TSV: head, relation, tail"),
            path_arg("aliases", "alias TSV: entity, surface form"),
        ]
    };
    Command::new("dragonforge")
        .about("Joint text and knowledge-graph pretraining, finetuning and evaluation")
        .subcommand_required(true)
        .subcommand(sub("build-vocab", "build a token vocabulary from a corpus").arg(path_arg("corpus", "plain-text corpus, blank-line separated documents").required(true)))
        .subcommand(sub("gen-synthetic", "write a synthetic aligned corpus, graph and question set"))
        .subcommand(
            sub("pretrain", "pretrain on a corpus and graph, or on a synthetic world when none is given")
                .args(graph_args())
                .arg(path_arg("corpus", "plain-text corpus"))
                .arg(path_arg("vocab", "token TSV from build-vocab")),
        )
        .subcommand(
            sub("finetune", "finetune a checkpoint on multiple-choice questions")
                .arg(path_arg("checkpoint", "checkpoint to start from").required(true))
                .args(graph_args())
                .arg(path_arg("train", "training questions, JSON lines"))
                .arg(path_arg("dev", "dev questions, JSON lines"))
                .arg(path_arg("test", "test questions, JSON lines")),
        )
        .subcommand(
            sub("eval-lp", "rank held-out triplets")
                .arg(path_arg("checkpoint", "checkpoint to evaluate").required(true))
                .args(graph_args())
                .arg(path_arg("corpus", "corpus supplying the text context"))
                .arg(path_arg("test", "test triplet TSV"))
                .arg(Arg::new("mode").long("mode").value_parser(["kg_plus_text", "kg_only"]).default_value("kg_plus_text")),
        )
        .subcommand(
            sub("eval-qa", "multiple-choice accuracy of a checkpoint")
                .arg(path_arg("checkpoint", "checkpoint to evaluate").required(true))
                .args(graph_args())
                .arg(path_arg("data", "questions, JSON lines"))
                .arg(Arg::new("split").long("split").default_value("test")),
        )
        .subcommand(sub("ablation", "pretrain and evaluate every cell of an ablation grid").arg(
            Arg::new("grid").long("grid").value_parser(["default", "full", "directional"]).default_value("default"),
        ))
        .subcommand(
            sub("dump-attention", "export graph attention and pooling weights for one input")
                .arg(path_arg("checkpoint", "checkpoint to inspect").required(true))
                .args(graph_args())
                .arg(Arg::new("text").long("text").required(true).help("input text"))
                .arg(Arg::new("choice").long("choice").action(ArgAction::Append).help("answer choice appended after [SEP]; repeatable")),
        )
}

fn effective_config(base: RunConfig, m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = base;
    if let Some(p) = m.get_one::<PathBuf>("config") {
        cfg.merge_file(p)?;
    }
    cfg.merge_env()?;
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.name) {
            cfg.set(k.name, v, Provenance::Flag)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Checkpoint config with model keys pinned to the stored architecture.
fn config_over_checkpoint<F: crate::numerics::Real>(ck: &Checkpoint<F>, m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = effective_config(ck.config.clone(), m)?;
    cfg.set_model(&ck.model.config, Provenance::File)?;
    Ok(cfg)
}

struct Out(PathBuf);

impl Out {
    fn new(m: &ArgMatches) -> Result<Self> {
        let dir = m.get_one::<PathBuf>("out").cloned().unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self(dir))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn write(&self, name: &str, body: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn json(&self, name: &str, value: &impl serde::Serialize) -> Result<PathBuf> {
        self.write(name, serde_json::to_string_pretty(value).expect("reports serialize") + "\n")
    }

    fn config(&self, cfg: &RunConfig) -> Result<()> {
        self.write("config.txt", cfg.to_text()).map(|_| ())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_options(cfg: &RunConfig) -> Result<LoadOptions> {
    Ok(LoadOptions {
        inverse_relations: cfg.parse("data.inverse_relations")?,
    })
}

fn world(cfg: &RunConfig) -> Result<SyntheticWorld> {
    SyntheticWorld::generate(cfg.world()?)
}

/// The graph named by `--kg`, or the synthetic world's.
fn graph(m: &ArgMatches, cfg: &RunConfig, w: &mut Option<SyntheticWorld>) -> Result<KnowledgeGraph> {
    match m.get_one::<PathBuf>("kg") {
        Some(p) => load_kg(p, m.get_one::<PathBuf>("aliases").map(PathBuf::as_path), load_options(cfg)?),
        None => Ok(w.get_or_insert(world(cfg)?).knowledge_graph()),
    }
}

fn cmd_build_vocab(m: &ArgMatches) -> Result<()> {
    let cfg = effective_config(RunConfig::default(), m)?;
    let out = Out::new(m)?;
    let corpus = m.get_one::<PathBuf>("corpus").expect("required");
    let segments = segment_corpus(corpus, cfg.model()?.encoder.max_seq_len)?;
    let vocab = TokenVocab::build(segments.iter().map(|s| s.text.as_str()), cfg.parse("data.min_token_freq")?);
    out.write("tokens.tsv", vocab.to_tsv())?;
    out.config(&cfg)?;
    println!("{} tokens", vocab.len());
    Ok(())
}

fn cmd_gen_synthetic(m: &ArgMatches) -> Result<()> {
    let cfg = effective_config(RunConfig::default(), m)?;
    let out = Out::new(m)?;
    let w = world(&cfg)?;
    w.write_to(&out.0)?;
    out.config(&cfg)?;
    println!("{} facts, {} questions", w.facts.len(), w.mcqa.len());
    Ok(())
}

fn cmd_pretrain(m: &ArgMatches) -> Result<()> {
    let cfg = effective_config(RunConfig::default(), m)?;
    let out = Out::new(m)?;
    let model_cfg = cfg.model()?;
    let (max_seq_len, max_nodes) = (model_cfg.encoder.max_seq_len, model_cfg.encoder.max_nodes);
    let mut w = None;
    let g = graph(m, &cfg, &mut w)?;
    let segments: Vec<RawSegment> = match (m.get_one::<PathBuf>("corpus"), m.get_one::<PathBuf>("kg")) {
        (Some(p), Some(_)) => segment_corpus(p, max_seq_len)?,
        (None, None) => segment_documents(&w.as_ref().expect("synthetic world").corpus(), max_seq_len),
        _ => return Err(Error::Config("--corpus and --kg must be given together".into())),
    };
    let tokens = match m.get_one::<PathBuf>("vocab") {
        Some(p) => TokenVocab::from_tsv(&read(p)?, &p.display().to_string())?,
        None => TokenVocab::build(segments.iter().map(|s| s.text.as_str()), cfg.parse("data.min_token_freq")?),
    };
    let seeds = SeedStream::new(cfg.seed()?);
    let examples = build_examples(&segments, &g, &tokens, max_seq_len, max_nodes, seeds);
    let sizes = VocabSizes {
        tokens: tokens.len(),
        entities: g.num_entities(),
        relations: g.relations().len(),
    };
    let mut model = Model::<f32>::new(model_cfg, sizes, seeds)?;
    let every: usize = cfg.parse("pretrain.checkpoint_every")?;
    let mut trainer = Pretrainer::new(cfg.pretrain()?, &model, seeds)?;
    let entities = g.entities().names().to_vec();
    let relations = g.relations().names().to_vec();
    out.config(&cfg)?;
    let mut metrics = String::new();
    let result = trainer.run(&mut model, &examples, |s, model| {
        metrics.push_str(&s.to_json_line());
        metrics.push('\n');
        if every > 0 && (s.step + 1) % every == 0 {
            let view = CheckpointRef {
                config: &cfg,
                tokens: &tokens,
                entities: &entities,
                relations: &relations,
                model,
            };
            view.save(&out.path(&format!("checkpoint-step{}.bin", s.step + 1)))?;
        }
        Ok(())
    });
    out.write("metrics.jsonl", &metrics)?;
    result?;
    let ck = Checkpoint {
        config: cfg.clone(),
        tokens,
        entities,
        relations,
        model,
    };
    let path = out.path("checkpoint.bin");
    ck.save(&path)?;
    println!("{} steps, checkpoint {}", trainer.step_index(), path.display());
    Ok(())
}

fn questions(m: &ArgMatches, key: &str, fallback: impl FnOnce() -> Result<Vec<McqaExample>>) -> Result<Vec<McqaExample>> {
    match m.get_one::<PathBuf>(key) {
        Some(p) => load_mcqa(p),
        None => fallback(),
    }
}

fn load_checkpoint(m: &ArgMatches) -> Result<Checkpoint<f32>> {
    Checkpoint::load(m.get_one::<PathBuf>("checkpoint").expect("required"))
}

fn cmd_finetune(m: &ArgMatches) -> Result<()> {
    let mut ck = load_checkpoint(m)?;
    let cfg = config_over_checkpoint(&ck, m)?;
    let out = Out::new(m)?;
    let mut w = None;
    let g = graph(m, &cfg, &mut w)?;
    ck.check_entities(g.entities().names())?;
    let split = |i: usize| -> Result<Vec<McqaExample>> {
        let w = match &w {
            Some(w) => w,
            None => {
                return Err(Error::Config("--train, --dev and --test are required with --kg".into()));
            }
        };
        let (a, b, c) = w.mcqa_splits();
        Ok([a, b, c].into_iter().nth(i).expect("three splits"))
    };
    let train = questions(m, "train", || split(0))?;
    let dev = questions(m, "dev", || split(1))?;
    let test = questions(m, "test", || split(2))?;
    let e = &ck.model.config.encoder;
    let seeds = SeedStream::new(cfg.seed()?);
    let prep = |qs: &[McqaExample]| prepare(qs, &g, &ck.tokens, e.max_seq_len, e.max_nodes, seeds);
    let (train, dev, test) = (prep(&train)?, prep(&dev)?, prep(&test)?);
    out.config(&cfg)?;
    let report = finetune(&mut ck.model, &train, &dev, &cfg.finetune()?, seeds)?;
    out.json("finetune_report.json", &report)?;
    let dev_acc = evaluate(&ck.model, &dev, "dev")?;
    let test_acc = evaluate(&ck.model, &test, "test")?;
    out.json("accuracy_dev.json", &dev_acc)?;
    out.json("accuracy_test.json", &test_acc)?;
    ck.config = cfg;
    ck.save(&out.path("checkpoint.bin"))?;
    println!("dev {:.4} test {:.4} ({} training questions)", dev_acc.accuracy, test_acc.accuracy, report.n_train_used);
    Ok(())
}

fn parse_triplets(text: &str, origin: &str, g: &KnowledgeGraph) -> Result<(Vec<Triplet>, usize)> {
    let mut out = Vec::new();
    let mut unknown = 0;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [h, r, t] = cols[..] else {
            return Err(Error::Parse {
                path: origin.into(),
                line: n + 1,
                msg: "expected head<TAB>relation<TAB>tail".into(),
            });
        };
        match (g.entities().id(h), g.relations().id(r), g.entities().id(t)) {
            (Some(head), Some(rel), Some(tail)) => out.push(Triplet { head, rel, tail }),
            _ => unknown += 1,
        }
    }
    Ok((out, unknown))
}

fn cmd_eval_lp(m: &ArgMatches) -> Result<()> {
    let ck = load_checkpoint(m)?;
    let cfg = config_over_checkpoint(&ck, m)?;
    let out = Out::new(m)?;
    let mut w = None;
    let g = graph(m, &cfg, &mut w)?;
    ck.check_entities(g.entities().names())?;
    let e = &ck.model.config.encoder;
    let (segments, test, unknown) = match (m.get_one::<PathBuf>("corpus"), m.get_one::<PathBuf>("test"), &w) {
        (Some(c), Some(t), _) => {
            let (test, unknown) = parse_triplets(&read(t)?, &t.display().to_string(), &g)?;
            (segment_corpus(c, e.max_seq_len)?, test, unknown)
        }
        (None, None, Some(w)) => {
            let test = w.text_only_facts().iter().filter_map(|f| w.triplet(&g, f)).collect();
            (segment_documents(&w.corpus(), e.max_seq_len), test, 0)
        }
        _ => return Err(Error::Config("--corpus and --test must be given together".into())),
    };
    let seeds = SeedStream::new(cfg.seed()?);
    let examples = build_examples(&segments, &g, &ck.tokens, e.max_seq_len, e.max_nodes, seeds);
    let mut known: std::collections::HashSet<Triplet> = g.triplets().iter().copied().collect();
    known.extend(test.iter().copied());
    let (queries, skipped) = build_queries(&test, &examples, &known);
    let report = match m.get_one::<String>("mode").map(String::as_str) {
        Some("kg_only") => DistMultBaseline::train(&g, &cfg.baseline()?, seeds)?.evaluate(&examples, &queries, skipped + unknown),
        _ => eval_contextual(&ck.model, &examples, &queries, skipped + unknown)?,
    };
    out.config(&cfg)?;
    out.json("lp_report.json", &report)?;
    println!("hits@3 {:.4} mrr {:.4} over {} queries ({} skipped)", report.hits_at_3, report.mrr, report.n, report.skipped);
    Ok(())
}

fn cmd_eval_qa(m: &ArgMatches) -> Result<()> {
    let ck = load_checkpoint(m)?;
    let cfg = config_over_checkpoint(&ck, m)?;
    let out = Out::new(m)?;
    let mut w = None;
    let g = graph(m, &cfg, &mut w)?;
    ck.check_entities(g.entities().names())?;
    let qs = match (m.get_one::<PathBuf>("data"), &w) {
        (Some(p), _) => load_mcqa(p)?,
        (None, Some(w)) => w.mcqa_splits().2,
        (None, None) => return Err(Error::Config("--data is required with --kg".into())),
    };
    let e = &ck.model.config.encoder;
    let prepared = prepare(&qs, &g, &ck.tokens, e.max_seq_len, e.max_nodes, SeedStream::new(cfg.seed()?))?;
    let split = m.get_one::<String>("split").map_or("test", String::as_str);
    let report = evaluate(&ck.model, &prepared, split)?;
    out.config(&cfg)?;
    out.json(&format!("accuracy_{split}.json"), &report)?;
    println!("{split} accuracy {:.4} over {}", report.accuracy, report.n);
    Ok(())
}

fn cmd_ablation(m: &ArgMatches) -> Result<()> {
    let cfg = effective_config(RunConfig::default(), m)?;
    let out = Out::new(m)?;
    let name = m.get_one::<String>("grid").map_or("default", String::as_str);
    let cells = grid_by_name(name).ok_or_else(|| Error::Config(format!("unknown grid `{name}`")))?;
    out.config(&cfg)?;
    let rows = run_ablation(&cfg, &cells, &cfg.seeds()?, |r| {
        eprintln!(
            "seed {} {} {} {} {}: mcqa {:?} mrr {:?}{}",
            r.seed,
            r.objective,
            r.scorer,
            r.fusion,
            r.kg_input,
            r.mcqa_accuracy,
            r.lp_mrr,
            r.error.as_ref().map_or(String::new(), |e| format!(" error: {e}"))
        )
    })?;
    out.write("ablation.tsv", to_tsv(&rows))?;
    out.json("ablation.json", &rows)?;
    println!("{} rows", rows.len());
    Ok(())
}

fn cmd_dump_attention(m: &ArgMatches) -> Result<()> {
    let ck = load_checkpoint(m)?;
    let cfg = config_over_checkpoint(&ck, m)?;
    let out = Out::new(m)?;
    let mut w = None;
    let g = graph(m, &cfg, &mut w)?;
    ck.check_entities(g.entities().names())?;
    let e = &ck.model.config.encoder;
    let text = m.get_one::<String>("text").expect("required");
    let choices: Vec<&String> = m.get_many::<String>("choice").map(|v| v.collect()).unwrap_or_default();
    let seeds = SeedStream::new(cfg.seed()?);
    let inputs: Vec<(crate::text::TextSegment, Vec<crate::kg::EntityId>)> = if choices.is_empty() {
        vec![link_entities(text, g.entities(), &ck.tokens, e.max_seq_len)]
    } else {
        choices.iter().map(|c| link_parts(&[text, c.as_str()], g.entities(), &ck.tokens, e.max_seq_len)).collect()
    };
    let mut records = Vec::new();
    for (i, (segment, linked)) in inputs.into_iter().enumerate() {
        let local = retrieve_local_kg(&linked, &g, e.max_nodes, &mut seeds.rng_at("dump/retrieval", i as u64));
        records.extend(dump_attention(&ck.model, i, &TrainExample { segment, local }, &g)?);
    }
    out.config(&cfg)?;
    let p = out.write("attention.jsonl", to_json_lines(&records))?;
    println!("{} records, {}", records.len(), p.display());
    Ok(())
}

fn valid_flags(subcommand: &str) -> String {
    let cmd = command();
    let Some(sub) = cmd.get_subcommands().find(|c| c.get_name() == subcommand) else {
        let names: Vec<&str> = cmd.get_subcommands().map(|c| c.get_name()).collect();
        return format!("valid subcommands: {}", names.join(", "));
    };
    let flags: Vec<String> = sub.get_arguments().filter_map(|a| a.get_long()).map(|l| format!("--{l}")).collect();
    format!("valid flags for {subcommand}: {}", flags.join(" "))
}

/// Parses `args` (program name first) and runs the subcommand; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let matches = match command().try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            if e.kind() == clap::error::ErrorKind::UnknownArgument {
                eprintln!("{}", valid_flags(args.get(1).and_then(|a| a.to_str()).unwrap_or("")));
            }
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let (name, m) = matches.subcommand().expect("subcommand required");
    let result = match name {
        "build-vocab" => cmd_build_vocab(m),
        "gen-synthetic" => cmd_gen_synthetic(m),
        "pretrain" => cmd_pretrain(m),
        "finetune" => cmd_finetune(m),
        "eval-lp" => cmd_eval_lp(m),
        "eval-qa" => cmd_eval_qa(m),
        "ablation" => cmd_ablation(m),
        "dump-attention" => cmd_dump_attention(m),
        _ => unreachable!("clap rejects unknown subcommands"),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::TensorError;

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Data("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::EmptyGraph("g".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::Tensor(TensorError::NonFinite { op: "exp" })), EXIT_NUMERIC);
    }

    #[test]
    fn flag_listing() {
        let pretrain = valid_flags("pretrain");
        assert!(pretrain.contains("--seed") && pretrain.contains("--pretrain-steps"), "{pretrain}");
        assert!(valid_flags("nope").contains("dump-attention"));
    }

    #[test]
    fn help_exits_zero_and_garbage_exits_one() {
        assert_eq!(run(["dragonforge", "--help"]), EXIT_OK);
        assert_eq!(run(["dragonforge", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["dragonforge"]), EXIT_USAGE);
    }
}
