//! Exact set-semantics evaluation over an edge index.

use std::collections::BTreeSet;

use super::Query;
use crate::kg::{EdgeIndex, EntityId};

/// Membership mask of the exact answers of `query` on `edges`.
///
/// A negated projection is the complement, within all entities, of the
/// relational image of its child.
pub fn answer_mask(query: &Query, edges: &EdgeIndex) -> Vec<bool> {
    let n = edges.num_entities();
    match query {
        Query::Anchor(e) => {
            let mut m = vec![false; n];
            m[*e as usize] = true;
            m
        }
        Query::Projection {
            relation,
            negated,
            child,
        } => {
            let src = answer_mask(child, edges);
            let mut image = vec![false; n];
            for (h, _) in src.iter().enumerate().filter(|(_, &b)| b) {
                for &t in edges.tails(h as EntityId, *relation) {
                    image[t as usize] = true;
                }
            }
            if *negated {
                image.iter_mut().for_each(|b| *b = !*b);
            }
            image
        }
        Query::And(cs) => cs
            .iter()
            .map(|c| answer_mask(c, edges))
            .reduce(|a, b| a.iter().zip(&b).map(|(x, y)| *x && *y).collect())
            .unwrap_or_else(|| vec![true; n]),
        Query::Or(cs) => cs
            .iter()
            .map(|c| answer_mask(c, edges))
            .reduce(|a, b| a.iter().zip(&b).map(|(x, y)| *x || *y).collect())
            .unwrap_or_else(|| vec![false; n]),
    }
}

pub fn symbolic_answers(query: &Query, edges: &EdgeIndex) -> BTreeSet<EntityId> {
    answer_mask(query, edges)
        .into_iter()
        .enumerate()
        .filter(|(_, b)| *b)
        .map(|(i, _)| i as EntityId)
        .collect()
}
