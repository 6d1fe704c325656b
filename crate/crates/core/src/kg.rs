//! In-memory knowledge graph: interned vocabularies, split-tagged triples,
//! reciprocal relations, and TSV loaders.
//!
//! Relation ids are interleaved: the `k`-th relation name read from disk gets
//! id `2k`, and its reciprocal (heads and tails swapped) gets id `2k + 1`.
//! Every stored triple has its reciprocal stored alongside it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;
pub type TypeId = u32;

/// Suffix appended to a relation name to address its reciprocal.
pub const INVERSE_SUFFIX: &str = "^-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    fn index(self) -> usize {
        self as usize
    }
}

/// Cumulative union of splits used to build an edge index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraphView {
    Train,
    TrainValid,
    All,
}

impl GraphView {
    pub fn includes(self, split: Split) -> bool {
        match self {
            GraphView::Train => split == Split::Train,
            GraphView::TrainValid => split != Split::Test,
            GraphView::All => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    pub fn reciprocal(self) -> Self {
        Self::new(self.tail, inverse_of(self.relation), self.head)
    }
}

/// Id of the reciprocal of `relation`.
pub fn inverse_of(relation: RelationId) -> RelationId {
    relation ^ 1
}

pub fn is_inverse(relation: RelationId) -> bool {
    relation & 1 == 1
}

/// Bijective name <-> dense id table, ids assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u32, n.as_str()))
    }

    /// Writes `name<TAB>id` per line.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, name) in self.iter() {
            writeln!(out, "{name}\t{id}")?;
        }
        Ok(())
    }
}

/// Outcome of loading one triples file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadStats {
    pub lines: usize,
    /// Distinct triples the file added to its split (reciprocals not counted).
    pub added: usize,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    splits: [BTreeSet<Triple>; 3],
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads `train.tsv` and, when present, `valid.tsv` and `test.tsv` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut kg = Self::new();
        kg.load_triples(dir.join("train.tsv"), Split::Train)?;
        for (file, split) in [("valid.tsv", Split::Valid), ("test.tsv", Split::Test)] {
            let path = dir.join(file);
            if path.exists() {
                kg.load_triples(path, split)?;
            }
        }
        Ok(kg)
    }

    pub fn load_triples(&mut self, path: impl AsRef<Path>, split: Split) -> Result<LoadStats> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        self.read_triples(BufReader::new(file), path, split)
    }

    /// Reads `head<TAB>relation<TAB>tail` lines. Blank lines are ignored.
    pub fn read_triples<R: BufRead>(
        &mut self,
        reader: R,
        source: impl AsRef<Path>,
        split: Split,
    ) -> Result<LoadStats> {
        let source = source.as_ref();
        let mut stats = LoadStats::default();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            stats.lines += 1;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: source.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if self.add_named(fields[0], fields[1], fields[2], split) {
                stats.added += 1;
            }
        }
        Ok(stats)
    }

    /// Interns the names and inserts the triple and its reciprocal.
    /// Returns `false` if the triple was already present in `split`.
    pub fn add_named(&mut self, head: &str, relation: &str, tail: &str, split: Split) -> bool {
        let h = self.entities.intern(head);
        let t = self.entities.intern(tail);
        let r = self.relations.intern(relation) * 2;
        self.add(Triple::new(h, r, t), split)
    }

    /// Inserts a triple given dense ids; `triple.relation` may be either direction.
    pub fn add(&mut self, triple: Triple, split: Split) -> bool {
        let set = &mut self.splits[split.index()];
        let fresh = set.insert(triple);
        set.insert(triple.reciprocal());
        fresh
    }

    pub fn intern_entity(&mut self, name: &str) -> EntityId {
        self.entities.intern(name)
    }

    /// Returns the forward id of a base relation.
    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        self.relations.intern(name) * 2
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Number of relation ids, reciprocals included.
    pub fn num_relations(&self) -> usize {
        self.relations.len() * 2
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    /// Base relation names (reciprocals are not interned).
    pub fn base_relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name)
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.name(id)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        match name.strip_suffix(INVERSE_SUFFIX) {
            Some(base) => self.relations.get(base).map(|r| r * 2 + 1),
            None => self.relations.get(name).map(|r| r * 2),
        }
    }

    pub fn relation_name(&self, id: RelationId) -> Option<String> {
        let base = self.relations.name(id / 2)?;
        Some(if is_inverse(id) {
            format!("{base}{INVERSE_SUFFIX}")
        } else {
            base.to_owned()
        })
    }

    /// All triples of a split, reciprocals included, in sorted order.
    pub fn triples(&self, split: Split) -> impl Iterator<Item = &Triple> {
        self.splits[split.index()].iter()
    }

    /// Number of distinct triples as loaded, reciprocals excluded.
    pub fn base_triple_count(&self, split: Split) -> usize {
        self.splits[split.index()]
            .iter()
            .filter(|t| !is_inverse(t.relation))
            .count()
    }

    pub fn contains(&self, triple: &Triple, split: Split) -> bool {
        self.splits[split.index()].contains(triple)
    }

    pub fn graph_view(&self, view: GraphView) -> EdgeIndex {
        let mut index = EdgeIndex::new(self.num_entities(), self.num_relations());
        for split in Split::ALL.into_iter().filter(|s| view.includes(*s)) {
            for t in self.triples(split) {
                index.insert(*t);
            }
        }
        index.finish();
        index
    }

    /// Writes the entity vocabulary as `name<TAB>id` lines.
    pub fn write_entity_vocab<W: Write>(&self, out: W) -> std::io::Result<()> {
        self.entities.write_tsv(out)
    }

    /// Writes the relation vocabulary (reciprocals included) as `name<TAB>id` lines.
    pub fn write_relation_vocab<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in 0..self.num_relations() as RelationId {
            writeln!(out, "{}\t{r}", self.relation_name(r).unwrap_or_default())?;
        }
        Ok(())
    }
}

/// `(head, relation) -> sorted tails` over a union of splits.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeIndex {
    num_entities: usize,
    num_relations: usize,
    tails: BTreeMap<(EntityId, RelationId), Vec<EntityId>>,
}

impl EdgeIndex {
    pub fn new(num_entities: usize, num_relations: usize) -> Self {
        Self {
            num_entities,
            num_relations,
            tails: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, t: Triple) {
        self.tails.entry((t.head, t.relation)).or_default().push(t.tail);
    }

    /// Sorts and dedups every tail list. Call after a batch of inserts.
    pub fn finish(&mut self) {
        for v in self.tails.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.tails
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.tails(t.head, t.relation).binary_search(&t.tail).is_ok()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&(EntityId, RelationId), &Vec<EntityId>)> {
        self.tails.iter()
    }

    pub fn edges(&self) -> impl Iterator<Item = Triple> + '_ {
        self.tails
            .iter()
            .flat_map(|(&(h, r), ts)| ts.iter().map(move |&t| Triple::new(h, r, t)))
    }

    pub fn len(&self) -> usize {
        self.tails.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.tails.is_empty()
    }
}

/// Entity type annotations over a flat type vocabulary.
#[derive(Debug, Clone, Default)]
pub struct TypeAnnotations {
    types: Vocab,
    of_entity: Vec<BTreeSet<TypeId>>,
    /// Lines skipped because their entity is not in the graph.
    pub skipped_unknown: usize,
}

impl TypeAnnotations {
    pub fn new(num_entities: usize) -> Self {
        Self {
            types: Vocab::new(),
            of_entity: vec![BTreeSet::new(); num_entities],
            skipped_unknown: 0,
        }
    }

    pub fn load(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), path, kg)
    }

    /// Reads `entity<TAB>type` lines; unknown entities are counted and skipped.
    pub fn read<R: BufRead>(reader: R, source: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<Self> {
        let source = source.as_ref();
        let mut ann = Self::new(kg.num_entities());
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    path: source.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected 2 tab-separated fields, found {}", fields.len()),
                });
            }
            match kg.entity_id(fields[0]) {
                Some(e) => ann.add(e, fields[1]),
                None => {
                    log::warn!("{}:{}: unknown entity `{}`", source.display(), lineno + 1, fields[0]);
                    ann.skipped_unknown += 1;
                }
            }
        }
        Ok(ann)
    }

    pub fn add(&mut self, entity: EntityId, type_name: &str) {
        let ty = self.types.intern(type_name);
        if self.of_entity.len() <= entity as usize {
            self.of_entity.resize(entity as usize + 1, BTreeSet::new());
        }
        self.of_entity[entity as usize].insert(ty);
    }

    pub fn types(&self) -> &Vocab {
        &self.types
    }

    pub fn num_entities(&self) -> usize {
        self.of_entity.len()
    }

    /// Types carried by `entity`; empty for untyped or out-of-range entities.
    pub fn of(&self, entity: EntityId) -> &BTreeSet<TypeId> {
        static EMPTY: BTreeSet<TypeId> = BTreeSet::new();
        self.of_entity.get(entity as usize).unwrap_or(&EMPTY)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (EntityId, TypeId)> + '_ {
        self.of_entity
            .iter()
            .enumerate()
            .flat_map(|(e, ts)| ts.iter().map(move |&t| (e as EntityId, t)))
    }

    pub fn len(&self) -> usize {
        self.of_entity.iter().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
