//! Synthetic query generation with easy/hard answer labeling.
//!
//! Queries are grounded backwards from a sampled target entity on the fuller
//! graph, so each one has at least one answer there. Easy answers are those on
//! the smaller graph; hard answers are the remaining answers on the fuller one.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{answer_mask, symbolic_answers, LabeledQuery, Query, QueryAst, Shape, Structure};
use crate::kg::{EdgeIndex, EntityId, GraphView, KnowledgeGraph, RelationId};

/// Which split the answers of generated queries are drawn for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerSplit {
    /// All answers come from the training graph; hard sets are empty.
    Train,
    /// Hard answers need validation edges.
    Valid,
    /// Hard answers need test edges.
    Test,
}

impl AnswerSplit {
    fn views(self) -> (GraphView, GraphView) {
        match self {
            AnswerSplit::Train => (GraphView::Train, GraphView::Train),
            AnswerSplit::Valid => (GraphView::Train, GraphView::TrainValid),
            AnswerSplit::Test => (GraphView::TrainValid, GraphView::All),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationReport {
    pub requested: usize,
    pub produced: usize,
    pub attempts: usize,
    pub warning: Option<String>,
}

const RETRIES_PER_QUERY: usize = 100;
const NEGATION_TRIES: usize = 10;

struct Grounder<'a> {
    full: &'a EdgeIndex,
    incoming: Vec<Vec<(RelationId, EntityId)>>,
    reachable: Vec<EntityId>,
}

impl<'a> Grounder<'a> {
    fn new(full: &'a EdgeIndex) -> Self {
        let mut incoming = vec![Vec::new(); full.num_entities()];
        for t in full.edges() {
            incoming[t.tail as usize].push((t.relation, t.head));
        }
        let reachable = (0..full.num_entities() as EntityId)
            .filter(|&e| !incoming[e as usize].is_empty())
            .collect();
        Self {
            full,
            incoming,
            reachable,
        }
    }

    fn ground(&self, shape: &Shape, target: EntityId, rng: &mut ChaCha8Rng) -> Option<Query> {
        match shape {
            Shape::Anchor => Some(Query::Anchor(target)),
            Shape::Proj { negated: false, child } => {
                let &(r, src) = self.incoming[target as usize].choose(rng)?;
                Some(Query::proj(r, self.ground(child, src, rng)?))
            }
            Shape::Proj { negated: true, child } => {
                let positive = Shape::Proj {
                    negated: false,
                    child: child.clone(),
                };
                for _ in 0..NEGATION_TRIES {
                    let &other = self.reachable.choose(rng)?;
                    let Some(q) = self.ground(&positive, other, rng) else {
                        continue;
                    };
                    if !answer_mask(&q, self.full)[target as usize] {
                        let Query::Projection { relation, child, .. } = q else {
                            unreachable!()
                        };
                        return Some(Query::Projection {
                            relation,
                            negated: true,
                            child,
                        });
                    }
                }
                None
            }
            Shape::And(cs) => {
                let children = cs
                    .iter()
                    .map(|c| self.ground(c, target, rng))
                    .collect::<Option<Vec<_>>>()?;
                distinct(&children).then_some(Query::And(children))
            }
            Shape::Or(cs) => {
                let mut children = Vec::with_capacity(cs.len());
                for (k, c) in cs.iter().enumerate() {
                    let t = if k == 0 { target } else { *self.reachable.choose(rng)? };
                    children.push(self.ground(c, t, rng)?);
                }
                distinct(&children).then_some(Query::Or(children))
            }
        }
    }
}

fn distinct(children: &[Query]) -> bool {
    children.iter().collect::<BTreeSet<_>>().len() == children.len()
}

/// Generates up to `count` distinct queries of `structure`.
///
/// At most `100 * count` groundings are attempted; a shortfall is reported in
/// the returned report rather than as an error.
pub fn generate_queries(
    kg: &KnowledgeGraph,
    structure: Structure,
    count: usize,
    seed: u64,
    split: AnswerSplit,
) -> (Vec<LabeledQuery>, GenerationReport) {
    let (small_view, full_view) = split.views();
    let small = kg.graph_view(small_view);
    let full = kg.graph_view(full_view);
    let grounder = Grounder::new(&full);
    let shape = structure.shape();
    // the canonical shape sorts children; shuffle sibling order per query for variety
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (structure as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let budget = count.saturating_mul(RETRIES_PER_QUERY);
    let mut attempts = 0;

    while out.len() < count && attempts < budget && !grounder.reachable.is_empty() {
        attempts += 1;
        let target = grounder.reachable[rng.gen_range(0..grounder.reachable.len())];
        let Some(mut root) = grounder.ground(&shape, target, &mut rng) else {
            continue;
        };
        if let Query::And(cs) | Query::Or(cs) = &mut root {
            cs.shuffle(&mut rng);
        }
        if seen.contains(&root) {
            continue;
        }
        let full_answers = symbolic_answers(&root, &full);
        if !full_answers.contains(&target) {
            continue;
        }
        let easy = symbolic_answers(&root, &small);
        let hard: BTreeSet<EntityId> = full_answers.difference(&easy).copied().collect();
        if split != AnswerSplit::Train && hard.is_empty() {
            continue;
        }
        if split == AnswerSplit::Train && easy.is_empty() {
            continue;
        }
        seen.insert(root.clone());
        out.push(LabeledQuery {
            ast: QueryAst {
                root,
                structure: Some(structure),
            },
            easy,
            hard,
        });
    }

    let warning = (out.len() < count).then(|| {
        format!(
            "generated {} of {count} `{structure}` queries within {attempts} attempts",
            out.len()
        )
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let report = GenerationReport {
        requested: count,
        produced: out.len(),
        attempts,
        warning,
    };
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Split;

    fn ring_kg(n: usize, held_out: bool) -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::new();
        for i in 0..n {
            for (r, step) in [("next", 1), ("skip", 2), ("back", n - 1)] {
                let split = if held_out && (i * 7 + step) % 5 == 0 { Split::Test } else { Split::Train };
                kg.add_named(&format!("e{i}"), r, &format!("e{}", (i + step) % n), split);
            }
        }
        kg
    }

    #[test]
    fn complete_graph_has_no_hard_answers() {
        let kg = ring_kg(12, false);
        let (qs, report) = generate_queries(&kg, Structure::P2, 5, 1, AnswerSplit::Test);
        assert!(qs.is_empty());
        assert_eq!(report.produced, 0);
        assert!(report.warning.is_some());
        assert_eq!(report.attempts, 500);
    }

    #[test]
    fn deterministic_under_seed() {
        let kg = ring_kg(12, true);
        for s in Structure::ALL {
            let (a, _) = generate_queries(&kg, s, 4, 9, AnswerSplit::Test);
            let (b, _) = generate_queries(&kg, s, 4, 9, AnswerSplit::Test);
            assert_eq!(a, b, "{s}");
        }
    }

    #[test]
    fn labels_are_consistent_for_every_structure() {
        let kg = ring_kg(15, true);
        let small = kg.graph_view(GraphView::TrainValid);
        let full = kg.graph_view(GraphView::All);
        for s in Structure::ALL {
            let (qs, report) = generate_queries(&kg, s, 6, 3, AnswerSplit::Test);
            assert!(report.produced > 0, "{s}: {report:?}");
            for q in qs {
                assert_eq!(Structure::of(&q.ast.root), Some(s));
                assert!(q.easy.is_disjoint(&q.hard));
                assert!(!q.hard.is_empty());
                assert_eq!(q.easy, symbolic_answers(&q.ast.root, &small));
                let full_answers = symbolic_answers(&q.ast.root, &full);
                assert!(q.hard.is_subset(&full_answers));
            }
        }
    }

    #[test]
    fn union_easy_set_is_union_of_branches() {
        let kg = ring_kg(15, true);
        let small = kg.graph_view(GraphView::TrainValid);
        let (qs, _) = generate_queries(&kg, Structure::U2, 5, 2, AnswerSplit::Test);
        assert!(!qs.is_empty());
        for q in qs {
            let Query::Or(cs) = &q.ast.root else { panic!() };
            let union: BTreeSet<_> = cs.iter().flat_map(|c| symbolic_answers(c, &small)).collect();
            assert_eq!(q.easy, union);
        }
    }

    #[test]
    fn training_queries_have_no_hard_answers() {
        let kg = ring_kg(12, true);
        let (qs, report) = generate_queries(&kg, Structure::I2, 8, 5, AnswerSplit::Train);
        assert_eq!(report.produced, 8);
        assert!(qs.iter().all(|q| q.hard.is_empty() && !q.easy.is_empty()));
    }
}
