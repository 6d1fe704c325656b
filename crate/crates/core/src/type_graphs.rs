//! Type-based head and tail entity-relation compatibility graphs.
//!
//! For a relation `r` the head type set is the union of the types of every
//! observed training head, and the tail type set is the intersection of the
//! types of every observed training tail. An entity is head (tail) compatible
//! with `r` when its own types meet the head (tail) type set.

use std::collections::BTreeSet;
use std::io::Write;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Split, TypeAnnotations, TypeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Head,
    Tail,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Head => "head",
            Side::Tail => "tail",
        }
    }
}

/// Diagnostics collected while building the graphs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    /// Relations with no training triples; both of their type sets are empty.
    pub empty_relations: Vec<RelationId>,
    /// Relations whose tail type set came out empty, so tail compatibility
    /// fell back to the observed training tails.
    pub tail_fallbacks: Vec<RelationId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedEntityRelationGraphs {
    num_entities: usize,
    head_types: Vec<BTreeSet<TypeId>>,
    tail_types: Vec<BTreeSet<TypeId>>,
    head_mask: Vec<Vec<bool>>,
    tail_mask: Vec<Vec<bool>>,
    pub report: BuildReport,
}

impl TypedEntityRelationGraphs {
    /// Builds both graphs from the training split.
    pub fn build(kg: &KnowledgeGraph, types: &TypeAnnotations) -> Result<Self> {
        if kg.base_triple_count(Split::Train) == 0 {
            return Err(Error::Precondition("training split is empty".into()));
        }
        let nv = kg.num_entities();
        let nr = kg.num_relations();

        let mut heads: Vec<BTreeSet<EntityId>> = vec![BTreeSet::new(); nr];
        let mut tails: Vec<BTreeSet<EntityId>> = vec![BTreeSet::new(); nr];
        for t in kg.triples(Split::Train) {
            heads[t.relation as usize].insert(t.head);
            tails[t.relation as usize].insert(t.tail);
        }

        // reciprocal triples are part of the split, so an inverse relation sees
        // the tails of r as heads and vice versa
        let mut head_types = vec![BTreeSet::new(); nr];
        let mut tail_types = vec![BTreeSet::new(); nr];
        for r in 0..nr {
            head_types[r] = heads[r].iter().flat_map(|&h| types.of(h).iter().copied()).collect();
            let mut intersection: Option<BTreeSet<TypeId>> = None;
            for &t in &tails[r] {
                let ts = types.of(t);
                intersection = Some(match intersection {
                    None => ts.clone(),
                    Some(acc) => acc.intersection(ts).copied().collect(),
                });
            }
            tail_types[r] = intersection.unwrap_or_default();
        }

        let mut report = BuildReport::default();
        let mut head_mask = vec![vec![false; nv]; nr];
        let mut tail_mask = vec![vec![false; nv]; nr];
        for r in 0..nr {
            if heads[r].is_empty() {
                report.empty_relations.push(r as RelationId);
                continue;
            }
            for e in 0..nv {
                let ts = types.of(e as EntityId);
                head_mask[r][e] = !ts.is_disjoint(&head_types[r]);
                tail_mask[r][e] = !ts.is_disjoint(&tail_types[r]);
            }
            // observed heads always get a row, typed or not
            for &h in &heads[r] {
                head_mask[r][h as usize] = true;
            }
            if tail_types[r].is_empty() {
                report.tail_fallbacks.push(r as RelationId);
                for &t in &tails[r] {
                    tail_mask[r][t as usize] = true;
                }
            }
        }

        Ok(Self {
            num_entities: nv,
            head_types,
            tail_types,
            head_mask,
            tail_mask,
            report,
        })
    }

    /// Graphs where every pair is compatible on both sides.
    pub fn full(num_entities: usize, num_relations: usize) -> Self {
        Self::uniform(num_entities, num_relations, true)
    }

    /// Graphs with no compatible pairs.
    pub fn empty(num_entities: usize, num_relations: usize) -> Self {
        Self::uniform(num_entities, num_relations, false)
    }

    fn uniform(num_entities: usize, num_relations: usize, value: bool) -> Self {
        Self {
            num_entities,
            head_types: vec![BTreeSet::new(); num_relations],
            tail_types: vec![BTreeSet::new(); num_relations],
            head_mask: vec![vec![value; num_entities]; num_relations],
            tail_mask: vec![vec![value; num_entities]; num_relations],
            report: BuildReport::default(),
        }
    }

    /// Graphs with explicit masks and no type sets, e.g. restored from a file.
    pub fn from_masks(head_mask: Vec<Vec<bool>>, tail_mask: Vec<Vec<bool>>) -> Result<Self> {
        let nr = head_mask.len();
        let nv = head_mask.first().map_or(0, Vec::len);
        if tail_mask.len() != nr || head_mask.iter().chain(&tail_mask).any(|m| m.len() != nv) {
            return Err(Error::Dimension("compat masks have inconsistent shapes".into()));
        }
        Ok(Self {
            num_entities: nv,
            head_types: vec![BTreeSet::new(); nr],
            tail_types: vec![BTreeSet::new(); nr],
            head_mask,
            tail_mask,
            report: BuildReport::default(),
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.head_mask.len()
    }

    pub fn head_types(&self, r: RelationId) -> &BTreeSet<TypeId> {
        &self.head_types[r as usize]
    }

    pub fn tail_types(&self, r: RelationId) -> &BTreeSet<TypeId> {
        &self.tail_types[r as usize]
    }

    pub fn compat_mask(&self, r: RelationId, side: Side) -> &[bool] {
        match side {
            Side::Head => &self.head_mask[r as usize],
            Side::Tail => &self.tail_mask[r as usize],
        }
    }

    pub fn is_head_compatible(&self, e: EntityId, r: RelationId) -> bool {
        self.head_mask[r as usize][e as usize]
    }

    pub fn is_tail_compatible(&self, e: EntityId, r: RelationId) -> bool {
        self.tail_mask[r as usize][e as usize]
    }

    /// `(entity, relation)` pairs of one side, ordered by relation then entity.
    pub fn pairs(&self, side: Side) -> impl Iterator<Item = (EntityId, RelationId)> + '_ {
        let masks = match side {
            Side::Head => &self.head_mask,
            Side::Tail => &self.tail_mask,
        };
        masks.iter().enumerate().flat_map(|(r, m)| {
            m.iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(move |(e, _)| (e as EntityId, r as RelationId))
        })
    }

    pub fn count(&self, side: Side) -> usize {
        self.pairs(side).count()
    }

    /// Writes `relation<TAB>side<TAB>entity` lines, head side first.
    pub fn write_tsv<W: Write>(&self, kg: &KnowledgeGraph, mut out: W) -> std::io::Result<()> {
        for side in [Side::Head, Side::Tail] {
            for (e, r) in self.pairs(side) {
                writeln!(
                    out,
                    "{}\t{}\t{}",
                    kg.relation_name(r).unwrap_or_default(),
                    side.as_str(),
                    kg.entity_name(e).unwrap_or_default()
                )?;
            }
        }
        Ok(())
    }
}
