//! The global knowledge graph and its vocabularies.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::normalize_surface;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triplet {
    pub fn new(head: usize, rel: usize, tail: usize) -> Self {
        Self {
            head: EntityId(head),
            rel: RelationId(rel),
            tail: EntityId(tail),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Out,
    In,
}

/// One incident edge seen from a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Adjacent {
    pub rel: RelationId,
    pub neighbor: EntityId,
    pub direction: Direction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityVocab {
    names: Vec<String>,
    index: HashMap<String, EntityId>,
    aliases: HashMap<String, EntityId>,
    max_alias_tokens: usize,
}

impl EntityVocab {
    pub fn intern(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = EntityId(self.names.len());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        // Default surface form: lowercased, underscores read as spaces.
        self.add_alias(&name.replace('_', " "), id);
        id
    }

    /// Registers an extra surface form. The first entity to claim a form keeps it.
    pub fn add_alias(&mut self, surface: &str, id: EntityId) {
        let surface = normalize_surface(surface);
        if surface.is_empty() {
            return;
        }
        self.max_alias_tokens = self.max_alias_tokens.max(surface.split(' ').count());
        self.aliases.entry(surface).or_insert(id);
    }

    /// Token length of the longest registered surface form.
    pub fn max_alias_tokens(&self) -> usize {
        self.max_alias_tokens
    }

    pub fn id(&self, name: &str) -> Option<EntityId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: EntityId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Entity for a normalized surface form.
    pub fn lookup_alias(&self, surface: &str) -> Option<EntityId> {
        self.aliases.get(surface).copied()
    }

    pub fn aliases(&self) -> impl Iterator<Item = (&str, EntityId)> {
        self.aliases.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Relation id 0 is the reserved interaction link between `v_int` and linked entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationVocab {
    names: Vec<String>,
    index: HashMap<String, RelationId>,
}

pub const INTERACTION: RelationId = RelationId(0);
pub const INTERACTION_NAME: &str = "[interaction]";

impl Default for RelationVocab {
    fn default() -> Self {
        let mut v = Self {
            names: Vec::new(),
            index: HashMap::new(),
        };
        v.intern(INTERACTION_NAME);
        v
    }
}

impl RelationVocab {
    pub fn intern(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = RelationId(self.names.len());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<RelationId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: RelationId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Adds `<rel>_inv` relation types with materialized inverse triplets.
    pub inverse_relations: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: EntityVocab,
    relations: RelationVocab,
    triplets: Vec<Triplet>,
    adjacency: Vec<Vec<Adjacent>>,
    members: HashSet<Triplet>,
}

impl KnowledgeGraph {
    /// Builds a graph from named triplets; duplicates collapse.
    pub fn from_named<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>, opts: LoadOptions) -> Self {
        Self::from_named_with(EntityVocab::default(), rows, opts)
    }

    /// Like [`from_named`](Self::from_named) but with a pre-populated entity vocabulary,
    /// so entities without edges still get ids.
    pub fn from_named_with<'a>(
        entities: EntityVocab,
        rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
        opts: LoadOptions,
    ) -> Self {
        let mut g = KnowledgeGraph {
            entities,
            relations: RelationVocab::default(),
            triplets: Vec::new(),
            adjacency: Vec::new(),
            members: HashSet::new(),
        };
        for (h, r, t) in rows {
            let head = g.entities.intern(h);
            let tail = g.entities.intern(t);
            let rel = g.relations.intern(r);
            g.insert(Triplet { head, rel, tail });
            if opts.inverse_relations {
                let inv = g.relations.intern(&format!("{r}_inv"));
                g.insert(Triplet {
                    head: tail,
                    rel: inv,
                    tail: head,
                });
            }
        }
        g.finish();
        g
    }

    fn insert(&mut self, t: Triplet) {
        if self.members.insert(t) {
            self.triplets.push(t);
        }
    }

    fn finish(&mut self) {
        self.adjacency = vec![Vec::new(); self.entities.len()];
        for t in &self.triplets {
            self.adjacency[t.head.0].push(Adjacent {
                rel: t.rel,
                neighbor: t.tail,
                direction: Direction::Out,
            });
            self.adjacency[t.tail.0].push(Adjacent {
                rel: t.rel,
                neighbor: t.head,
                direction: Direction::In,
            });
        }
        self.adjacency.iter_mut().for_each(|a| a.sort());
    }

    pub fn entities(&self) -> &EntityVocab {
        &self.entities
    }

    pub fn entities_mut(&mut self) -> &mut EntityVocab {
        &mut self.entities
    }

    pub fn relations(&self) -> &RelationVocab {
        &self.relations
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    fn check_entity(&self, id: EntityId) -> Result<()> {
        if id.0 >= self.entities.len() {
            return Err(Error::Bounds {
                what: "entity",
                id: id.0,
                len: self.entities.len(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, t: &Triplet) -> Result<bool> {
        self.check_entity(t.head)?;
        self.check_entity(t.tail)?;
        if t.rel.0 >= self.relations.len() {
            return Err(Error::Bounds {
                what: "relation",
                id: t.rel.0,
                len: self.relations.len(),
            });
        }
        Ok(self.members.contains(t))
    }

    /// Incident edges of `v` in both directions, sorted by `(rel, neighbor, direction)`.
    pub fn neighbors(&self, v: EntityId) -> Result<&[Adjacent]> {
        self.check_entity(v)?;
        Ok(self.adjacency(v))
    }

    /// Entities interned after loading (through `entities_mut`) have no edges.
    pub(crate) fn adjacency(&self, v: EntityId) -> &[Adjacent] {
        self.adjacency.get(v.0).map_or(&[], Vec::as_slice)
    }

    pub fn adjacency_len(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for t in &self.triplets {
            let _ = writeln!(
                s,
                "{}\t{}\t{}",
                self.entities.name(t.head),
                self.relations.name(t.rel),
                self.entities.name(t.tail)
            );
        }
        s
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Parses `head<TAB>relation<TAB>tail` lines.
    pub fn parse_tsv(text: &str, origin: &str, opts: LoadOptions) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: n + 1,
                    msg: format!("expected head<TAB>relation<TAB>tail, got {line:?}"),
                });
            }
            if fields[1] == INTERACTION_NAME {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: n + 1,
                    msg: format!("relation name {INTERACTION_NAME} is reserved"),
                });
            }
            rows.push((fields[0], fields[1], fields[2]));
        }
        if rows.is_empty() {
            return Err(Error::EmptyGraph(origin.to_string()));
        }
        Ok(Self::from_named(rows, opts))
    }

    /// Applies `surface<TAB>entity_name` lines; unknown entity names are a parse error.
    pub fn apply_aliases(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (surface, name) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                msg: "expected surface<TAB>entity_name".into(),
            })?;
            let id = self.entities.id(name).ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                msg: format!("unknown entity {name:?}"),
            })?;
            self.entities.add_alias(surface, id);
        }
        Ok(())
    }
}

pub fn load_kg(triplet_file: &Path, alias_file: Option<&Path>, opts: LoadOptions) -> Result<KnowledgeGraph> {
    let text = std::fs::read_to_string(triplet_file).map_err(|e| Error::io(triplet_file, e))?;
    let mut g = KnowledgeGraph::parse_tsv(&text, &triplet_file.display().to_string(), opts)?;
    if let Some(p) = alias_file {
        let aliases = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        g.apply_aliases(&aliases, &p.display().to_string())?;
    }
    Ok(g)
}
