//! JSON query trees and the labeled-query JSONL format.
//!
//! A node is one of
//! `{"op":"anchor","entity":E}`,
//! `{"op":"proj","rel":R,"neg":false,"child":NODE}`,
//! `{"op":"and","children":[NODE,...]}` or
//! `{"op":"or","children":[NODE,...]}`, where `E`/`R` are names or integer ids.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{LabeledQuery, Query, QueryAst, Structure, Vocabulary};
use crate::error::{Error, Result};
use crate::kg::EntityId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum NameOrId {
    Id(u32),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
enum Node {
    Anchor {
        entity: NameOrId,
    },
    Proj {
        rel: NameOrId,
        #[serde(default)]
        neg: bool,
        child: Box<Node>,
    },
    And {
        children: Vec<Node>,
    },
    Or {
        children: Vec<Node>,
    },
}

/// One JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledQueryRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub ast: serde_json::Value,
    #[serde(default)]
    pub easy: Vec<serde_json::Value>,
    #[serde(default)]
    pub hard: Vec<serde_json::Value>,
}

fn resolve_entity(v: &NameOrId, vocab: &dyn Vocabulary) -> Result<EntityId> {
    match v {
        NameOrId::Id(id) if (*id as usize) < vocab.num_entities() => Ok(*id),
        NameOrId::Id(id) => Err(Error::Query(format!("entity id {id} out of range"))),
        NameOrId::Name(n) => vocab.entity_by_name(n).ok_or_else(|| Error::Unknown {
            kind: "entity",
            name: n.clone(),
        }),
    }
}

fn resolve_relation(v: &NameOrId, vocab: &dyn Vocabulary) -> Result<u32> {
    match v {
        NameOrId::Id(id) if (*id as usize) < vocab.num_relations() => Ok(*id),
        NameOrId::Id(id) => Err(Error::Query(format!("relation id {id} out of range"))),
        NameOrId::Name(n) => vocab.relation_by_name(n).ok_or_else(|| Error::Unknown {
            kind: "relation",
            name: n.clone(),
        }),
    }
}

fn to_query(node: &Node, vocab: &dyn Vocabulary) -> Result<Query> {
    Ok(match node {
        Node::Anchor { entity } => Query::Anchor(resolve_entity(entity, vocab)?),
        Node::Proj { rel, neg, child } => Query::Projection {
            relation: resolve_relation(rel, vocab)?,
            negated: *neg,
            child: Box::new(to_query(child, vocab)?),
        },
        Node::And { children } | Node::Or { children } => {
            if children.len() < 2 {
                return Err(Error::Query("and/or nodes need at least two children".into()));
            }
            let cs = children
                .iter()
                .map(|c| to_query(c, vocab))
                .collect::<Result<Vec<_>>>()?;
            if matches!(node, Node::And { .. }) {
                Query::And(cs)
            } else {
                Query::Or(cs)
            }
        }
    })
}

fn to_node(query: &Query, vocab: &dyn Vocabulary) -> Node {
    match query {
        Query::Anchor(e) => Node::Anchor {
            entity: vocab.entity_label(*e).map_or(NameOrId::Id(*e), NameOrId::Name),
        },
        Query::Projection {
            relation,
            negated,
            child,
        } => Node::Proj {
            rel: vocab
                .relation_label(*relation)
                .map_or(NameOrId::Id(*relation), NameOrId::Name),
            neg: *negated,
            child: Box::new(to_node(child, vocab)),
        },
        Query::And(cs) => Node::And {
            children: cs.iter().map(|c| to_node(c, vocab)).collect(),
        },
        Query::Or(cs) => Node::Or {
            children: cs.iter().map(|c| to_node(c, vocab)).collect(),
        },
    }
}

fn ast_from_value(ast: serde_json::Value, label: Option<&str>, vocab: &dyn Vocabulary) -> Result<QueryAst> {
    let node: Node = serde_json::from_value(ast).map_err(|e| Error::Query(e.to_string()))?;
    let root = to_query(&node, vocab)?;
    match label {
        Some(l) => QueryAst::labeled(root, l.parse()?),
        None => Ok(QueryAst::unlabeled(root)),
    }
}

/// Parses either a bare query node or an object `{"label": ..., "ast": NODE}`.
pub fn parse_query(text: &str, vocab: &dyn Vocabulary) -> Result<QueryAst> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("ast") {
        Some(_) => {
            let record: LabeledQueryRecord = serde_json::from_value(value)?;
            ast_from_value(record.ast, record.label.as_deref(), vocab)
        }
        None => ast_from_value(value, None, vocab),
    }
}

/// Serializes a query tree, preferring names when the vocabulary has them.
pub fn query_to_json(ast: &QueryAst, vocab: &dyn Vocabulary) -> serde_json::Value {
    let node = serde_json::to_value(to_node(&ast.root, vocab)).expect("query nodes serialize");
    match ast.structure {
        Some(s) => serde_json::json!({ "label": s.label(), "ast": node }),
        None => serde_json::json!({ "ast": node }),
    }
}

fn entity_list(values: &[serde_json::Value], vocab: &dyn Vocabulary) -> Result<BTreeSet<EntityId>> {
    values
        .iter()
        .map(|v| {
            let key: NameOrId = serde_json::from_value(v.clone()).map_err(|e| Error::Query(e.to_string()))?;
            resolve_entity(&key, vocab)
        })
        .collect()
}

/// Reads labeled queries, one JSON object per non-blank line.
pub fn read_jsonl<R: BufRead>(reader: R, vocab: &dyn Vocabulary) -> Result<Vec<LabeledQuery>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = || -> Result<LabeledQuery> {
            let rec: LabeledQueryRecord = serde_json::from_str(&line)?;
            let ast = ast_from_value(rec.ast, rec.label.as_deref(), vocab)?;
            let easy = entity_list(&rec.easy, vocab)?;
            let hard = entity_list(&rec.hard, vocab)?;
            if !easy.is_disjoint(&hard) {
                return Err(Error::Query("easy and hard answers overlap".into()));
            }
            Ok(LabeledQuery { ast, easy, hard })
        };
        out.push(parse().map_err(|e| Error::Query(format!("line {}: {e}", lineno + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut out: W, queries: &[LabeledQuery], vocab: &dyn Vocabulary) -> Result<()> {
    let names = |set: &BTreeSet<EntityId>| -> Vec<serde_json::Value> {
        set.iter()
            .map(|&e| vocab.entity_label(e).map_or(serde_json::json!(e), serde_json::Value::String))
            .collect()
    };
    for q in queries {
        let node = serde_json::to_value(to_node(&q.ast.root, vocab))?;
        let rec = LabeledQueryRecord {
            label: q.ast.structure.map(|s: Structure| s.label().to_owned()),
            ast: node,
            easy: names(&q.easy),
            hard: names(&q.hard),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}
