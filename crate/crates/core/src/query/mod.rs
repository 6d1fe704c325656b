//! Query trees over entity and relation ids, and the fourteen benchmark
//! query structures.

mod generate;
mod json;
mod oracle;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

pub use generate::{generate_queries, AnswerSplit, GenerationReport};
pub use json::{parse_query, query_to_json, read_jsonl, write_jsonl, LabeledQueryRecord};
pub use oracle::{answer_mask, symbolic_answers};

/// A first-order query rooted at the answer variable.
///
/// Negation lives on projection atoms only. `And`/`Or` need at least two
/// children.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Query {
    Anchor(EntityId),
    Projection {
        relation: RelationId,
        negated: bool,
        child: Box<Query>,
    },
    And(Vec<Query>),
    Or(Vec<Query>),
}

impl Query {
    pub fn anchor(e: EntityId) -> Self {
        Query::Anchor(e)
    }

    pub fn proj(relation: RelationId, child: Query) -> Self {
        Query::Projection {
            relation,
            negated: false,
            child: Box::new(child),
        }
    }

    pub fn neg_proj(relation: RelationId, child: Query) -> Self {
        Query::Projection {
            relation,
            negated: true,
            child: Box::new(child),
        }
    }

    /// The query with ids erased and `And`/`Or` children in canonical order.
    pub fn shape(&self) -> Shape {
        match self {
            Query::Anchor(_) => Shape::Anchor,
            Query::Projection { negated, child, .. } => Shape::Proj {
                negated: *negated,
                child: Box::new(child.shape()),
            },
            Query::And(cs) => Shape::and(cs.iter().map(Query::shape).collect()),
            Query::Or(cs) => Shape::or(cs.iter().map(Query::shape).collect()),
        }
    }

    /// Checks arity and id ranges.
    pub fn validate(&self, num_entities: usize, num_relations: usize) -> Result<()> {
        match self {
            Query::Anchor(e) => {
                if *e as usize >= num_entities {
                    return Err(Error::Query(format!("entity id {e} out of range")));
                }
            }
            Query::Projection { relation, child, .. } => {
                if *relation as usize >= num_relations {
                    return Err(Error::Query(format!("relation id {relation} out of range")));
                }
                child.validate(num_entities, num_relations)?;
            }
            Query::And(cs) | Query::Or(cs) => {
                if cs.len() < 2 {
                    return Err(Error::Query("and/or nodes need at least two children".into()));
                }
                for c in cs {
                    c.validate(num_entities, num_relations)?;
                }
            }
        }
        Ok(())
    }

    /// Relations used anywhere in the tree.
    pub fn relations(&self) -> BTreeSet<RelationId> {
        let mut out = BTreeSet::new();
        self.visit(&mut |q| {
            if let Query::Projection { relation, .. } = q {
                out.insert(*relation);
            }
        });
        out
    }

    pub fn anchors(&self) -> Vec<EntityId> {
        let mut out = Vec::new();
        self.visit(&mut |q| {
            if let Query::Anchor(e) = q {
                out.push(*e);
            }
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&Query)) {
        f(self);
        match self {
            Query::Anchor(_) => {}
            Query::Projection { child, .. } => child.visit(f),
            Query::And(cs) | Query::Or(cs) => cs.iter().for_each(|c| c.visit(f)),
        }
    }
}

/// A query tree with an optional structure label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryAst {
    pub root: Query,
    pub structure: Option<Structure>,
}

impl QueryAst {
    /// Attaches `structure`, failing if the tree does not have that shape.
    pub fn labeled(root: Query, structure: Structure) -> Result<Self> {
        if root.shape() != structure.shape() {
            return Err(Error::Query(format!(
                "query shape does not match structure `{structure}`"
            )));
        }
        Ok(Self {
            root,
            structure: Some(structure),
        })
    }

    pub fn unlabeled(root: Query) -> Self {
        Self { root, structure: None }
    }
}

/// A query with its answers split into those reachable on the smaller graph
/// (easy) and those needing held-out edges (hard).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledQuery {
    pub ast: QueryAst,
    pub easy: BTreeSet<EntityId>,
    pub hard: BTreeSet<EntityId>,
}

/// Query trees with ids erased.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    Anchor,
    Proj { negated: bool, child: Box<Shape> },
    And(Vec<Shape>),
    Or(Vec<Shape>),
}

impl Shape {
    fn p(child: Shape) -> Shape {
        Shape::Proj {
            negated: false,
            child: Box::new(child),
        }
    }

    fn n(child: Shape) -> Shape {
        Shape::Proj {
            negated: true,
            child: Box::new(child),
        }
    }

    fn and(mut cs: Vec<Shape>) -> Shape {
        cs.sort();
        Shape::And(cs)
    }

    fn or(mut cs: Vec<Shape>) -> Shape {
        cs.sort();
        Shape::Or(cs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Structure {
    #[serde(rename = "1p")]
    P1,
    #[serde(rename = "2p")]
    P2,
    #[serde(rename = "3p")]
    P3,
    #[serde(rename = "2i")]
    I2,
    #[serde(rename = "3i")]
    I3,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "2u")]
    U2,
    #[serde(rename = "up")]
    Up,
    #[serde(rename = "2in")]
    In2,
    #[serde(rename = "3in")]
    In3,
    #[serde(rename = "inp")]
    Inp,
    #[serde(rename = "pin")]
    Pin,
    #[serde(rename = "pni")]
    Pni,
}

impl Structure {
    pub const ALL: [Structure; 14] = [
        Structure::P1,
        Structure::P2,
        Structure::P3,
        Structure::I2,
        Structure::I3,
        Structure::Pi,
        Structure::Ip,
        Structure::U2,
        Structure::Up,
        Structure::In2,
        Structure::In3,
        Structure::Inp,
        Structure::Pin,
        Structure::Pni,
    ];

    /// Existential positive structures.
    pub const EPFO: [Structure; 9] = [
        Structure::P1,
        Structure::P2,
        Structure::P3,
        Structure::I2,
        Structure::I3,
        Structure::Pi,
        Structure::Ip,
        Structure::U2,
        Structure::Up,
    ];

    /// EPFO structures outside the usual training set.
    pub const OOD: [Structure; 4] = [Structure::Pi, Structure::Ip, Structure::U2, Structure::Up];

    pub const NEGATION: [Structure; 5] = [
        Structure::In2,
        Structure::In3,
        Structure::Inp,
        Structure::Pin,
        Structure::Pni,
    ];

    /// Structures the adapter is trained on by default.
    pub const ADAPTER_TRAINING: [Structure; 4] = [Structure::I2, Structure::I3, Structure::In2, Structure::In3];

    pub fn label(self) -> &'static str {
        match self {
            Structure::P1 => "1p",
            Structure::P2 => "2p",
            Structure::P3 => "3p",
            Structure::I2 => "2i",
            Structure::I3 => "3i",
            Structure::Pi => "pi",
            Structure::Ip => "ip",
            Structure::U2 => "2u",
            Structure::Up => "up",
            Structure::In2 => "2in",
            Structure::In3 => "3in",
            Structure::Inp => "inp",
            Structure::Pin => "pin",
            Structure::Pni => "pni",
        }
    }

    pub fn has_negation(self) -> bool {
        Self::NEGATION.contains(&self)
    }

    /// Canonical shape of the structure.
    pub fn shape(self) -> Shape {
        use Shape::Anchor as A;
        let p = Shape::p;
        let n = Shape::n;
        match self {
            Structure::P1 => p(A),
            Structure::P2 => p(p(A)),
            Structure::P3 => p(p(p(A))),
            Structure::I2 => Shape::and(vec![p(A), p(A)]),
            Structure::I3 => Shape::and(vec![p(A), p(A), p(A)]),
            Structure::Pi => Shape::and(vec![p(p(A)), p(A)]),
            Structure::Ip => p(Shape::and(vec![p(A), p(A)])),
            Structure::U2 => Shape::or(vec![p(A), p(A)]),
            Structure::Up => p(Shape::or(vec![p(A), p(A)])),
            Structure::In2 => Shape::and(vec![p(A), n(A)]),
            Structure::In3 => Shape::and(vec![p(A), p(A), n(A)]),
            Structure::Inp => p(Shape::and(vec![p(A), n(A)])),
            Structure::Pin => Shape::and(vec![p(p(A)), n(A)]),
            Structure::Pni => Shape::and(vec![n(p(A)), p(A)]),
        }
    }

    /// The structure whose shape `query` has, if any.
    pub fn of(query: &Query) -> Option<Structure> {
        let shape = query.shape();
        Self::ALL.into_iter().find(|s| s.shape() == shape)
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.label() == s)
            .ok_or_else(|| Error::Query(format!("unknown structure label `{s}`")))
    }
}

/// Name resolution for queries and answer lists.
pub trait Vocabulary {
    fn num_entities(&self) -> usize;
    fn num_relations(&self) -> usize;
    fn entity_by_name(&self, name: &str) -> Option<EntityId>;
    fn relation_by_name(&self, name: &str) -> Option<RelationId>;
    fn entity_label(&self, id: EntityId) -> Option<String>;
    fn relation_label(&self, id: RelationId) -> Option<String>;
}

impl Vocabulary for KnowledgeGraph {
    fn num_entities(&self) -> usize {
        KnowledgeGraph::num_entities(self)
    }

    fn num_relations(&self) -> usize {
        KnowledgeGraph::num_relations(self)
    }

    fn entity_by_name(&self, name: &str) -> Option<EntityId> {
        self.entity_id(name)
    }

    fn relation_by_name(&self, name: &str) -> Option<RelationId> {
        self.relation_id(name)
    }

    fn entity_label(&self, id: EntityId) -> Option<String> {
        self.entity_name(id).map(str::to_owned)
    }

    fn relation_label(&self, id: RelationId) -> Option<String> {
        self.relation_name(id)
    }
}

/// Id-only vocabulary: names never resolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdSpace {
    pub num_entities: usize,
    pub num_relations: usize,
}

impl Vocabulary for IdSpace {
    fn num_entities(&self) -> usize {
        self.num_entities
    }

    fn num_relations(&self) -> usize {
        self.num_relations
    }

    fn entity_by_name(&self, _: &str) -> Option<EntityId> {
        None
    }

    fn relation_by_name(&self, _: &str) -> Option<RelationId> {
        None
    }

    fn entity_label(&self, _: EntityId) -> Option<String> {
        None
    }

    fn relation_label(&self, _: RelationId) -> Option<String> {
        None
    }
}
