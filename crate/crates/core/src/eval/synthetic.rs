//! Generated worlds: random relational facts rendered both as a knowledge graph
//! and as a text corpus, with a controlled share of facts kept to one modality.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, LoadOptions, Triplet};
use crate::rng::{Rng, SeedStream};

const RELATION_NAMES: [&str; 12] = [
    "lives_near",
    "works_with",
    "trades_with",
    "admires",
    "fears",
    "teaches",
    "visits",
    "protects",
    "owns",
    "follows",
    "avoids",
    "helps",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Visibility {
    Both,
    TextOnly,
    KgOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fact {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distractors {
    /// Any entity not forming a known fact with the question.
    Random,
    /// Prefer neighbors of the head under other relations, then entities of the gold's cluster.
    Hard,
    /// Entities of the gold's cluster with no graph edge to the head, so only
    /// the edge itself separates gold from distractors.
    SameCluster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_facts: usize,
    pub leak_rate: f64,
    pub n_clusters: usize,
    pub facts_per_doc: usize,
    pub n_choices: usize,
    pub distractors: Distractors,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_entities: 500,
            n_relations: 8,
            n_facts: 5000,
            leak_rate: 0.3,
            n_clusters: 10,
            facts_per_doc: 4,
            n_choices: 4,
            distractors: Distractors::SameCluster,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqaExample {
    pub question: String,
    pub choices: Vec<String>,
    pub gold: usize,
}

/// Where each text-visible fact was rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub fact: usize,
    pub doc: usize,
    pub sentence: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    pub clusters: Vec<usize>,
    pub facts: Vec<Fact>,
    pub visibility: Vec<Visibility>,
    /// Documents as lists of sentences.
    pub documents: Vec<Vec<String>>,
    pub alignment: Vec<Alignment>,
    pub mcqa: Vec<McqaExample>,
}

fn pseudo_words(n: usize, rng: &mut Rng, reserved: &HashSet<String>) -> Vec<String> {
    const CONS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let syllable = |rng: &mut Rng| {
        let c = CONS[rng.random_range(0..CONS.len())] as char;
        let v = VOWELS[rng.random_range(0..VOWELS.len())] as char;
        format!("{c}{v}")
    };
    let mut seen = reserved.clone();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = 2 + usize::from(rng.random::<f64>() < 0.5);
        let w: String = (0..k).map(|_| syllable(rng)).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Relation phrase as it appears in text.
pub fn phrase(relation: &str) -> String {
    relation.replace('_', " ")
}

pub fn render_fact(head: &str, relation: &str, tail: &str) -> String {
    format!("{head} {} {tail} .", phrase(relation))
}

pub fn render_question(head: &str, relation: &str) -> String {
    format!("{head} {} what ?", phrase(relation))
}

impl SyntheticWorld {
    pub fn generate(config: WorldConfig) -> Result<Self> {
        let c = &config;
        if c.n_entities < 2 || c.n_relations == 0 || c.n_facts == 0 || c.n_clusters == 0 || c.n_choices < 2 {
            return Err(Error::Config("world sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&c.leak_rate) {
            return Err(Error::Config(format!("leak_rate {} outside [0, 1]", c.leak_rate)));
        }
        let capacity = c.n_entities * c.n_relations * c.n_entities.div_ceil(c.n_clusters);
        if c.n_facts > capacity / 2 {
            return Err(Error::Config(format!("{} facts do not fit {} entities and {} relations", c.n_facts, c.n_entities, c.n_relations)));
        }
        let seeds = SeedStream::new(c.seed);
        let relation_names: Vec<String> = (0..c.n_relations)
            .map(|r| RELATION_NAMES.get(r).map_or_else(|| format!("relation{r}_of"), |s| s.to_string()))
            .collect();
        let mut reserved: HashSet<String> = relation_names.iter().flat_map(|r| r.split('_').map(String::from)).collect();
        reserved.insert("what".into());
        let entity_names = pseudo_words(c.n_entities, &mut seeds.rng("world/names"), &reserved);

        let mut rng = seeds.rng("world/clusters");
        let mut order: Vec<usize> = (0..c.n_entities).collect();
        order.shuffle(&mut rng);
        let mut clusters = vec![0; c.n_entities];
        for (i, &e) in order.iter().enumerate() {
            clusters[e] = i % c.n_clusters;
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); c.n_clusters];
        for (e, &k) in clusters.iter().enumerate() {
            members[k].push(e);
        }
        let perms: Vec<Vec<usize>> = (0..c.n_relations)
            .map(|_| {
                let mut p: Vec<usize> = (0..c.n_clusters).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();

        let mut rng = seeds.rng("world/facts");
        let mut seen = HashSet::new();
        let mut facts = Vec::with_capacity(c.n_facts);
        while facts.len() < c.n_facts {
            let head = rng.random_range(0..c.n_entities);
            let rel = rng.random_range(0..c.n_relations);
            let pool = &members[perms[rel][clusters[head]]];
            let tail = pool[rng.random_range(0..pool.len())];
            let f = Fact { head, rel, tail };
            if tail != head && seen.insert(f) {
                facts.push(f);
            }
        }

        let mut rng = seeds.rng("world/visibility");
        let visibility: Vec<Visibility> = facts
            .iter()
            .map(|_| {
                if rng.random::<f64>() >= c.leak_rate {
                    Visibility::Both
                } else if rng.random::<bool>() {
                    Visibility::TextOnly
                } else {
                    Visibility::KgOnly
                }
            })
            .collect();

        let (documents, alignment) = build_documents(&facts, &visibility, &entity_names, &relation_names, c, &mut seeds.rng("world/docs"));
        let mut world = Self {
            config,
            entity_names,
            relation_names,
            clusters,
            facts,
            visibility,
            documents,
            alignment,
            mcqa: Vec::new(),
        };
        world.mcqa = world.build_mcqa(&mut seeds.rng("world/mcqa"));
        Ok(world)
    }

    fn build_mcqa(&self, rng: &mut Rng) -> Vec<McqaExample> {
        let c = &self.config;
        let known: HashSet<(usize, usize, usize)> = self.facts.iter().map(|f| (f.head, f.rel, f.tail)).collect();
        let mut by_head: HashMap<usize, Vec<&Fact>> = HashMap::new();
        for f in &self.facts {
            by_head.entry(f.head).or_default().push(f);
        }
        let vis: HashMap<Fact, Visibility> = self.facts.iter().copied().zip(self.visibility.iter().copied()).collect();
        let linked: HashSet<(usize, usize)> = self
            .facts
            .iter()
            .zip(&self.visibility)
            .filter(|(_, v)| **v != Visibility::TextOnly)
            .flat_map(|(f, _)| [(f.head, f.tail), (f.tail, f.head)])
            .collect();
        let mut out = Vec::new();
        for (f, v) in self.facts.iter().zip(&self.visibility) {
            if *v != Visibility::KgOnly {
                continue;
            }
            let usable = |d: usize, chosen: &[usize]| d != f.head && d != f.tail && !chosen.contains(&d) && !known.contains(&(f.head, f.rel, d));
            let mut picks: Vec<usize> = Vec::new();
            if c.distractors == Distractors::Hard {
                let mut near: Vec<usize> = by_head
                    .get(&f.head)
                    .into_iter()
                    .flatten()
                    .filter(|g| g.rel != f.rel && vis[*g] != Visibility::TextOnly)
                    .map(|g| g.tail)
                    .collect();
                near.sort_unstable();
                near.dedup();
                near.shuffle(rng);
                for d in near {
                    if picks.len() + 1 < c.n_choices && usable(d, &picks) {
                        picks.push(d);
                    }
                }
                let mut same: Vec<usize> = (0..self.entity_names.len()).filter(|&e| self.clusters[e] == self.clusters[f.tail]).collect();
                same.shuffle(rng);
                for d in same {
                    if picks.len() + 1 < c.n_choices && usable(d, &picks) {
                        picks.push(d);
                    }
                }
            }
            if c.distractors == Distractors::SameCluster {
                let mut same: Vec<usize> = (0..self.entity_names.len())
                    .filter(|&e| self.clusters[e] == self.clusters[f.tail] && !linked.contains(&(f.head, e)))
                    .collect();
                same.shuffle(rng);
                for d in same {
                    if picks.len() + 1 < c.n_choices && usable(d, &picks) {
                        picks.push(d);
                    }
                }
            }
            while picks.len() + 1 < c.n_choices {
                let d = rng.random_range(0..self.entity_names.len());
                if usable(d, &picks) {
                    picks.push(d);
                }
            }
            let gold = rng.random_range(0..c.n_choices);
            picks.insert(gold, f.tail);
            out.push(McqaExample {
                question: render_question(&self.entity_names[f.head], &self.relation_names[f.rel]),
                choices: picks.iter().map(|&e| self.entity_names[e].clone()).collect(),
                gold,
            });
        }
        out
    }

    pub fn kg_facts(&self) -> impl Iterator<Item = &Fact> {
        self.facts.iter().zip(&self.visibility).filter(|(_, v)| **v != Visibility::TextOnly).map(|(f, _)| f)
    }

    /// Facts that only the text states; the link-prediction test set.
    pub fn text_only_facts(&self) -> Vec<Fact> {
        self.facts.iter().zip(&self.visibility).filter(|(_, v)| **v == Visibility::TextOnly).map(|(f, _)| *f).collect()
    }

    pub fn knowledge_graph(&self) -> KnowledgeGraph {
        let mut entities = crate::kg::EntityVocab::default();
        for n in &self.entity_names {
            entities.intern(n);
        }
        let rows: Vec<(&str, &str, &str)> = self
            .kg_facts()
            .map(|f| (self.entity_names[f.head].as_str(), self.relation_names[f.rel].as_str(), self.entity_names[f.tail].as_str()))
            .collect();
        KnowledgeGraph::from_named_with(entities, rows, LoadOptions::default())
    }

    pub fn corpus(&self) -> String {
        self.documents.iter().map(|d| d.join(" ")).collect::<Vec<_>>().join("\n\n") + "\n"
    }

    /// Recovers the fact a rendered sentence states.
    pub fn parse_sentence(&self, sentence: &str) -> Option<Fact> {
        let words: Vec<&str> = sentence.strip_suffix(" .")?.split(' ').collect();
        let (h, rest) = words.split_first()?;
        let (t, rel) = rest.split_last()?;
        let rel_phrase = rel.join(" ");
        let head = self.entity_names.iter().position(|n| n == h)?;
        let tail = self.entity_names.iter().position(|n| n == t)?;
        let rel = self.relation_names.iter().position(|r| phrase(r) == rel_phrase)?;
        Some(Fact { head, rel, tail })
    }

    pub fn fact_tsv(&self, facts: &[Fact]) -> String {
        let mut s = String::new();
        for f in facts {
            let _ = writeln!(s, "{}\t{}\t{}", self.entity_names[f.head], self.relation_names[f.rel], self.entity_names[f.tail]);
        }
        s
    }

    /// MCQA split into train/dev/test at 60/20/20 in generation order.
    pub fn mcqa_splits(&self) -> (Vec<McqaExample>, Vec<McqaExample>, Vec<McqaExample>) {
        let n = self.mcqa.len();
        let a = n * 3 / 5;
        let b = n * 4 / 5;
        (self.mcqa[..a].to_vec(), self.mcqa[a..b].to_vec(), self.mcqa[b..].to_vec())
    }

    pub fn entity_id(&self, index: usize) -> EntityId {
        EntityId(index)
    }

    /// The fact in the id space of `g`, which must come from [`Self::knowledge_graph`].
    pub fn triplet(&self, g: &KnowledgeGraph, f: &Fact) -> Option<Triplet> {
        let rel = g.relations().id(&self.relation_names[f.rel])?;
        Some(Triplet {
            head: EntityId(f.head),
            rel,
            tail: EntityId(f.tail),
        })
    }

    /// Writes `corpus.txt`, `kg.tsv`, `lp_test.tsv`, `mcqa_{train,dev,test}.jsonl` and `alignment.tsv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("corpus.txt", self.corpus())?;
        let kg: Vec<Fact> = self.kg_facts().copied().collect();
        write("kg.tsv", self.fact_tsv(&kg))?;
        write("lp_test.tsv", self.fact_tsv(&self.text_only_facts()))?;
        let (train, dev, test) = self.mcqa_splits();
        for (name, split) in [("mcqa_train.jsonl", train), ("mcqa_dev.jsonl", dev), ("mcqa_test.jsonl", test)] {
            let body: String = split.iter().map(|q| serde_json::to_string(q).expect("serialize") + "\n").collect();
            write(name, body)?;
        }
        let mut align = String::new();
        for a in &self.alignment {
            let _ = writeln!(align, "{}\t{}\t{}", a.doc, a.sentence, a.fact);
        }
        write("alignment.tsv", align)
    }

    /// Entity occurrence counts over all facts (heads and tails).
    pub fn entity_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.entity_names.len()];
        for f in &self.facts {
            counts[f.head] += 1;
            counts[f.tail] += 1;
        }
        counts
    }
}

/// Packs text-visible facts into documents by chaining facts that share an entity.
fn build_documents(
    facts: &[Fact],
    visibility: &[Visibility],
    names: &[String],
    relations: &[String],
    c: &WorldConfig,
    rng: &mut Rng,
) -> (Vec<Vec<String>>, Vec<Alignment>) {
    let mut pending: Vec<usize> = (0..facts.len()).filter(|&i| visibility[i] != Visibility::KgOnly).collect();
    pending.shuffle(rng);
    let mut by_entity: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in &pending {
        by_entity.entry(facts[i].head).or_default().push(i);
        by_entity.entry(facts[i].tail).or_default().push(i);
    }
    let mut used = vec![false; facts.len()];
    let mut docs = Vec::new();
    let mut alignment = Vec::new();
    for &seed in &pending {
        if used[seed] {
            continue;
        }
        let mut doc = vec![seed];
        used[seed] = true;
        while doc.len() < c.facts_per_doc {
            let last = facts[*doc.last().expect("nonempty")];
            let next = [last.tail, last.head]
                .iter()
                .flat_map(|e| by_entity.get(e).into_iter().flatten())
                .copied()
                .find(|&i| !used[i]);
            let Some(i) = next else { break };
            used[i] = true;
            doc.push(i);
        }
        let d = docs.len();
        let sentences = doc
            .iter()
            .enumerate()
            .map(|(s, &i)| {
                alignment.push(Alignment { fact: i, doc: d, sentence: s });
                let f = facts[i];
                render_fact(&names[f.head], &relations[f.rel], &names[f.tail])
            })
            .collect();
        docs.push(sentences);
    }
    (docs, alignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(leak: f64) -> SyntheticWorld {
        SyntheticWorld::generate(WorldConfig {
            n_entities: 60,
            n_relations: 4,
            n_facts: 300,
            leak_rate: leak,
            n_clusters: 4,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn no_leak_means_every_fact_in_both() {
        let w = small(0.0);
        assert!(w.visibility.iter().all(|v| *v == Visibility::Both));
        assert_eq!(w.alignment.len(), w.facts.len());
        assert_eq!(w.knowledge_graph().triplets().len(), w.facts.len());
        assert!(w.mcqa.is_empty());
    }

    #[test]
    fn sentences_round_trip_to_facts() {
        let w = small(0.4);
        for a in &w.alignment {
            let s = &w.documents[a.doc][a.sentence];
            let f = w.parse_sentence(s).unwrap();
            assert_eq!(f, w.facts[a.fact]);
            assert_eq!(&render_fact(&w.entity_names[f.head], &w.relation_names[f.rel], &w.entity_names[f.tail]), s);
        }
        let text_visible = w.visibility.iter().filter(|v| **v != Visibility::KgOnly).count();
        assert_eq!(w.alignment.len(), text_visible);
    }

    #[test]
    fn mcqa_gold_is_a_kg_fact() {
        let w = SyntheticWorld::generate(WorldConfig {
            n_entities: 60,
            n_relations: 4,
            n_facts: 300,
            leak_rate: 0.5,
            n_clusters: 4,
            distractors: Distractors::Hard,
            ..WorldConfig::default()
        })
        .unwrap();
        let g = w.knowledge_graph();
        assert!(!w.mcqa.is_empty());
        for q in &w.mcqa {
            assert_eq!(q.choices.len(), 4);
            let head = q.question.split(' ').next().unwrap();
            let rel_phrase = q.question.trim_end_matches(" what ?").split_once(' ').unwrap().1;
            let r = w.relation_names.iter().find(|r| phrase(r) == rel_phrase).unwrap();
            let h = g.entities().id(head).unwrap();
            let rid = g.relations().id(r).unwrap();
            for (i, c) in q.choices.iter().enumerate() {
                let t = g.entities().id(c).unwrap();
                let present = g.contains(&crate::kg::Triplet { head: h, rel: rid, tail: t }).unwrap();
                assert_eq!(present, i == q.gold);
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = small(0.3);
        let b = small(0.3);
        assert_eq!(a.facts, b.facts);
        assert_eq!(a.corpus(), b.corpus());
    }
}
